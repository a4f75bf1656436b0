import random

import pytest

from daosim.cluster import OC_SINGLE, OC_STRIPED, OC_STRIPED_R2, Cluster, hash64
from daosim.errors import AllReplicasFailed, ChecksumMismatch, UnknownClass
from daosim.kvstore import Extent, ExtentWrite, ObjectId, TargetStore

# hash64(dkey) % 8 for dkeys "0".."7", computed with a separate FNV-1a loop
GOLDEN_SPREAD_8 = [7, 4, 5, 2, 3, 0, 1, 6]


def make(n_targets, cost=1.0):
    cluster = Cluster(n_targets, request_cost=cost)
    return cluster, [TargetStore() for _ in range(n_targets)]


def test_fnv1a_reference_vectors():
    assert hash64(b"") == 0xCBF29CE484222325
    assert hash64(b"a") == 0xAF63DC4C8601EC8C
    assert hash64(b"foobar") == 0x85944171F73967E8


def test_single_target_class_ignores_dkey():
    cluster, _ = make(8)
    oid = ObjectId.make(OC_SINGLE, 1234)
    layout = cluster.object_open(oid)
    expected = hash64(oid.to_bytes()) % 8
    assert {layout.targets(str(i))[0] for i in range(50)} == {expected}


def test_striped_single_target_pool():
    cluster, _ = make(1)
    layout = cluster.object_open(ObjectId.make(OC_STRIPED, 1))
    assert {layout.targets(str(i))[0] for i in range(50)} == {0}


def test_striped_golden_spread():
    cluster, _ = make(8)
    layout = cluster.object_open(ObjectId.make(OC_STRIPED, 99))
    assert [layout.targets(str(i))[0] for i in range(8)] == GOLDEN_SPREAD_8


def test_replica_ordering():
    cluster, _ = make(8)
    layout = cluster.object_open(ObjectId.make(OC_STRIPED_R2, 5))
    assert [layout.targets(str(i)) for i in range(3)] == [[7, 0], [4, 5], [5, 6]]


def test_unknown_class():
    cluster, _ = make(4)
    with pytest.raises(UnknownClass):
        cluster.object_open(ObjectId.make(9, 1))


def test_open_is_deterministic():
    cluster, _ = make(8)
    oid = ObjectId.make(OC_STRIPED_R2, 42)
    first = cluster.object_open(oid)
    dkeys = [str(i).encode() for i in range(32)]
    expected = [first.targets(d) for d in dkeys]
    for _ in range(10_000):
        assert cluster.object_open(oid) == first
    assert [cluster.object_open(oid).targets(d) for d in dkeys] == expected


@pytest.mark.parametrize("n_targets", [2, 4, 8])
def test_dkey_spread(n_targets):
    cluster, _ = make(n_targets)
    layout = cluster.object_open(ObjectId.make(OC_STRIPED, 7))
    rng = random.Random(0)
    k = 64 * n_targets
    counts = [0] * n_targets
    for _ in range(k):
        counts[layout.targets(rng.randbytes(12))[0]] += 1
    assert all(0.7 * k / n_targets <= c <= 1.3 * k / n_targets for c in counts)


def _write(cluster, stores, oid, dkey, payload=b"payload", epoch=1):
    layout = cluster.object_open(oid)
    cluster.route_update(stores, layout, ExtentWrite.build(oid, dkey, "a", 0, payload, epoch))
    return layout


def test_replica_masks_at_rest_corruption():
    cluster, stores = make(4)
    oid = ObjectId.make(OC_STRIPED_R2, 3)
    layout = _write(cluster, stores, oid, "k")
    first = layout.targets("k")[0]
    stores[first].flip_bit(oid, "k", "a", 5)
    res = cluster.route_fetch(stores, layout, "k", "a", Extent(0, 7), 1)
    assert res.data == b"payload"


def test_both_replicas_corrupt_surfaces_mismatch():
    cluster, stores = make(4)
    oid = ObjectId.make(OC_STRIPED_R2, 3)
    layout = _write(cluster, stores, oid, "k")
    for t in layout.targets("k"):
        stores[t].flip_bit(oid, "k", "a", 0)
    with pytest.raises(ChecksumMismatch):
        cluster.route_fetch(stores, layout, "k", "a", Extent(0, 7), 1)


def test_corrupt_next_reply_detected():
    cluster, stores = make(2)
    oid = ObjectId.make(OC_SINGLE, 3)
    layout = _write(cluster, stores, oid, "k")
    cluster.inject_fault(layout.targets("k")[0], "corrupt-next")
    with pytest.raises(ChecksumMismatch):
        cluster.route_fetch(stores, layout, "k", "a", Extent(0, 7), 1)
    # the fault is one-shot
    assert cluster.route_fetch(stores, layout, "k", "a", Extent(0, 7), 1).data == b"payload"


def test_drop_target_without_replica():
    cluster, stores = make(2)
    oid = ObjectId.make(OC_SINGLE, 3)
    layout = _write(cluster, stores, oid, "k")
    cluster.inject_fault(layout.targets("k")[0], "drop-target")
    with pytest.raises(AllReplicasFailed):
        cluster.route_fetch(stores, layout, "k", "a", Extent(0, 7), 1)


def test_drop_target_with_replica():
    cluster, stores = make(4)
    oid = ObjectId.make(OC_STRIPED_R2, 3)
    layout = _write(cluster, stores, oid, "k")
    cluster.inject_fault(layout.targets("k")[0], "drop-target")
    assert cluster.route_fetch(stores, layout, "k", "a", Extent(0, 7), 1).data == b"payload"
    stats = cluster.queue_stats()
    assert stats[layout.targets("k")[0]].failures == 1


def test_queue_stats_counts():
    cluster, stores = make(8)
    assert all(s.served == 0 and s.busy_time == 0 and s.max_depth == 0
               for s in cluster.queue_stats())
    oid = ObjectId.make(OC_STRIPED_R2, 3)
    for i in range(25):
        _write(cluster, stores, oid, str(i))
    assert sum(s.served for s in cluster.queue_stats()) == 25 * 2


def test_single_dkey_class0_loads_one_target():
    cluster, stores = make(8)
    for i in range(20):
        _write(cluster, stores, ObjectId.make(OC_SINGLE, 77), "DATA", epoch=i + 1)
    busy = [s.busy_time for s in cluster.queue_stats()]
    assert max(busy) == sum(busy) == 20


def test_makespan_ratio_one_dkey_vs_eight():
    c = 0.5
    single, s_stores = make(8, c)
    spread, p_stores = make(8, c)
    for i in range(1000):
        _write(single, s_stores, ObjectId.make(OC_SINGLE, 1), "0", epoch=1)
        _write(spread, p_stores, ObjectId.make(OC_STRIPED, 1), str(i % 8), epoch=1)
    ratio = single.sync() / spread.sync()
    assert single.sync() == pytest.approx(1000 * c)
    assert 8 * 0.8 <= ratio <= 8 * 1.2


@pytest.mark.parametrize("n_targets", [2, 4, 8])
def test_serialization_bottleneck(n_targets):
    single, s_stores = make(n_targets)
    spread, p_stores = make(n_targets)
    layout = spread.object_open(ObjectId.make(OC_STRIPED, 1))
    dkeys = [str(i) for i in range(200)]
    for i in range(4000):
        _write(single, s_stores, ObjectId.make(OC_SINGLE, 1), "0")
        _write(spread, p_stores, layout.oid, dkeys[i % len(dkeys)])
    ratio = single.sync() / spread.sync()
    assert 0.7 * n_targets <= ratio <= 1.1 * n_targets


def test_queue_depth_tracks_backlog():
    cluster, stores = make(1)
    for _ in range(5):
        _write(cluster, stores, ObjectId.make(OC_SINGLE, 1), "k")
    assert cluster.queue_stats()[0].max_depth == 5
    cluster.sync()
    _write(cluster, stores, ObjectId.make(OC_SINGLE, 1), "k")
    assert cluster.queue_stats()[0].max_depth == 5
