"""Snapshots, aggregation and on-disk images.

A pool backed by a directory persists each container as a checksummed
image; reloading the pool restores every committed version.
"""

import tempfile

from daosim import Extent, ObjectId, Pool, pool_create
from daosim import image

oid = ObjectId.make(0, 1)

with tempfile.TemporaryDirectory() as root:
    pool = pool_create(2, root)
    pool.container_create("c")
    h = pool.container_open("c")

    for n in range(1, 6):
        with h.tx_start(n) as tx:
            tx.update(oid, "d", "a", 0, bytes([n]) * 8)

    # only persisted versions can be snapshotted
    h.persist(3)
    h.snapshot(3, "at3")
    reclaimed = h.aggregate(5)
    print("bytes reclaimed by aggregation:", reclaimed)
    print("latest:", h.read_at(5, oid, "d", "a", Extent(0, 8)).data)

    snap = pool.container_open("at3", "r")
    print("snapshot:", snap.read_at(snap.version(), oid, "d", "a", Extent(0, 8)).data)

    receipt = h.persist(5)
    print("persisted:", receipt)

    again = Pool.load(root)
    h2 = again.container_open("c", "r")
    print("after reload:", h2.read_at(5, oid, "d", "a", Extent(0, 8)).data)

    raw = next(iter(again.path.glob("*.dcsf"))).read_bytes()
    print("image problems:", image.check(raw) or "none")
