"""Simulated multi-target cluster.

Objects are placed with a fixed 64-bit FNV-1a hash: single-target objects by
the hash of their id, striped objects by the hash of each dkey. Every target
owns one serial service queue; request cost is charged against a virtual
clock, so a workload's makespan is the busiest queue's accumulated time.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

from .checksum import crc32c
from .errors import AllReplicasFailed, ChecksumMismatch, UnknownClass
from .kvstore import Extent, ExtentWrite, FetchResult, ObjectId, TargetStore, as_key

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def hash64(data: bytes, seed: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a."""
    h = seed
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


SINGLE_TARGET = "single-target"
DKEY_STRIPED = "dkey-striped"


@dataclass(frozen=True)
class ObjectClass:
    class_code: int
    replication: int
    stripe_mode: str


OC_SINGLE = 0
OC_STRIPED = 1
OC_STRIPED_R2 = 2

OBJECT_CLASSES = {
    OC_SINGLE: ObjectClass(OC_SINGLE, 1, SINGLE_TARGET),
    OC_STRIPED: ObjectClass(OC_STRIPED, 1, DKEY_STRIPED),
    OC_STRIPED_R2: ObjectClass(OC_STRIPED_R2, 2, DKEY_STRIPED),
}


@dataclass(frozen=True)
class ObjectLayout:
    oid: ObjectId
    oclass: ObjectClass
    n_targets: int

    @property
    def replication(self) -> int:
        return min(self.oclass.replication, self.n_targets)

    def _base(self, dkey) -> int:
        if self.oclass.stripe_mode == SINGLE_TARGET:
            return hash64(self.oid.to_bytes())
        return hash64(as_key(dkey))

    def targets(self, dkey) -> list[int]:
        """Ordered replica targets for ``dkey``; replica r sits on (hash + r) mod T."""
        base = self._base(dkey)
        return [(base + r) % self.n_targets for r in range(self.replication)]

    def all_targets(self) -> list[int]:
        if self.oclass.stripe_mode == SINGLE_TARGET:
            return self.targets(b"\0")
        return list(range(self.n_targets))


@dataclass
class TargetStats:
    target: int
    served: int = 0
    busy_time: float = 0.0
    max_depth: int = 0
    bytes_written: int = 0
    bytes_read: int = 0
    failures: int = 0


class TargetDown(Exception):
    pass


class ServiceQueue:
    """Serial request processor for one target, timed on a virtual clock."""

    def __init__(self, target: int, request_cost: float = 1.0, byte_cost: float = 0.0):
        self.target = target
        self.request_cost = request_cost
        self.byte_cost = byte_cost
        self.lock = threading.Lock()
        self.busy_until = 0.0
        self.stats = TargetStats(target)
        self.down = False
        self.corrupt_next = False
        self._pending: deque[float] = deque()

    def submit(self, now: float, fn, *, written: int = 0, read: int = 0):
        """Run ``fn`` as one request arriving at virtual time ``now``."""
        with self.lock:
            if self.down:
                self.stats.failures += 1
                raise TargetDown(self.target)
            while self._pending and self._pending[0] <= now:
                self._pending.popleft()
            cost = self.request_cost + self.byte_cost * (written + read)
            start = max(now, self.busy_until)
            self.busy_until = start + cost
            self._pending.append(self.busy_until)
            st = self.stats
            st.max_depth = max(st.max_depth, len(self._pending))
            st.served += 1
            st.busy_time += cost
            st.bytes_written += written
            st.bytes_read += read
            return fn()

    def run(self, fn):
        """Maintenance work under the queue lock, not charged as a request."""
        with self.lock:
            return fn()


@dataclass
class _Reply:
    data: bytes
    holes: object
    crc: int


class Cluster:
    """Targets, placement and routing shared by all containers of a pool.

    Stores are owned by containers (one ``TargetStore`` per target); each
    target's queue serialises requests for every container on it.
    """

    def __init__(self, n_targets: int, request_cost: float = 1.0, byte_cost: float = 0.0):
        if n_targets < 1:
            raise ValueError("a cluster needs at least one target")
        self.n_targets = n_targets
        self.queues = [ServiceQueue(t, request_cost, byte_cost) for t in range(n_targets)]
        self.now = 0.0
        self._clock_lock = threading.Lock()

    # -- placement -----------------------------------------------------------

    def object_open(self, oid: ObjectId) -> ObjectLayout:
        try:
            oclass = OBJECT_CLASSES[oid.class_code]
        except KeyError:
            raise UnknownClass(f"object class {oid.class_code} is not assigned") from None
        return ObjectLayout(oid, oclass, self.n_targets)

    # -- routing -------------------------------------------------------------

    def route_update(self, stores: list[TargetStore], layout: ObjectLayout,
                     write: ExtentWrite, allow_base: bool = False) -> None:
        if crc32c(write.payload) != write.checksum:
            raise ChecksumMismatch("payload corrupted before leaving the client")
        delivered = 0
        for t in layout.targets(write.dkey):
            store = stores[t]
            try:
                self.queues[t].submit(self.now, lambda: store.update(write, allow_base),
                                      written=len(write.payload))
            except TargetDown:
                continue
            delivered += 1
        if not delivered:
            raise AllReplicasFailed(f"no replica accepted update for {layout.oid!r}")

    def route_punch(self, stores: list[TargetStore], layout: ObjectLayout,
                    dkey=None, akey=None, *, epoch: int) -> None:
        targets = layout.all_targets() if dkey is None else layout.targets(dkey)
        delivered = 0
        for t in targets:
            store = stores[t]
            try:
                self.queues[t].submit(self.now, lambda: store.punch(layout.oid, dkey, akey,
                                                                    epoch=epoch))
            except TargetDown:
                continue
            delivered += 1
        if not delivered:
            raise AllReplicasFailed(f"no replica accepted punch for {layout.oid!r}")

    def route_fetch(self, stores: list[TargetStore], layout: ObjectLayout, dkey, akey,
                    extent: Extent, epoch: int) -> FetchResult:
        """Fetch from the first healthy replica, verifying the reply checksum."""
        mismatches = 0
        for t in layout.targets(dkey):
            queue, store = self.queues[t], stores[t]

            def serve():
                res = store.fetch(layout.oid, dkey, akey, extent, epoch)
                reply = _Reply(res.data, res.holes, res.checksum())
                if queue.corrupt_next:
                    queue.corrupt_next = False
                    flipped = bytearray(reply.data)
                    flipped[0] ^= 0x01
                    reply.data = bytes(flipped)
                return reply

            try:
                reply = queue.submit(self.now, serve, read=extent.length)
            except TargetDown:
                continue
            except ChecksumMismatch:
                mismatches += 1
                continue
            if crc32c(reply.data) != reply.crc:
                mismatches += 1
                continue
            return FetchResult(reply.data, reply.holes)
        if mismatches:
            raise ChecksumMismatch(f"no intact replica for {layout.oid!r} dkey {dkey!r}")
        raise AllReplicasFailed(f"all replicas down for {layout.oid!r} dkey {dkey!r}")

    def route_list(self, stores: list[TargetStore], layout: ObjectLayout,
                   epoch: int) -> dict[bytes, list[bytes]]:
        merged: dict[bytes, set] = {}
        reached = 0
        for t in layout.all_targets():
            store = stores[t]
            try:
                listing = self.queues[t].submit(self.now, lambda: store.list(layout.oid, epoch))
            except TargetDown:
                continue
            reached += 1
            for dkey, akeys in listing.items():
                merged.setdefault(dkey, set()).update(akeys)
        if not reached:
            raise AllReplicasFailed(f"no target reachable for {layout.oid!r}")
        return {d: sorted(merged[d]) for d in sorted(merged)}

    def route_bounds(self, stores: list[TargetStore], layout: ObjectLayout, dkey, akey,
                     epoch: int) -> tuple[int, int] | None:
        """Byte range ever written to a key up to ``epoch`` (union over replicas)."""
        lo = hi = None
        for t in layout.targets(dkey):
            if self.queues[t].down:
                continue
            b = self.queues[t].run(lambda: stores[t].extent_bounds(layout.oid, dkey, akey, epoch))
            if b is not None:
                lo = b[0] if lo is None else min(lo, b[0])
                hi = b[1] if hi is None else max(hi, b[1])
        return None if lo is None else (lo, hi)

    # -- faults and stats ----------------------------------------------------

    def inject_fault(self, target: int, kind: str) -> None:
        """``corrupt-next`` garbles the next fetch reply; ``drop-target`` takes it offline."""
        queue = self.queues[target]
        if kind == "corrupt-next":
            queue.corrupt_next = True
        elif kind == "drop-target":
            queue.down = True
        else:
            raise ValueError(f"unknown fault kind {kind!r}")

    def restore_target(self, target: int) -> None:
        q = self.queues[target]
        q.down = False
        q.corrupt_next = False

    def queue_stats(self) -> list[TargetStats]:
        out = []
        for q in self.queues:
            with q.lock:
                out.append(TargetStats(**vars(q.stats)))
        return out

    def sync(self) -> float:
        """Advance the virtual clock until every queue has drained."""
        with self._clock_lock:
            self.now = max([self.now] + [q.busy_until for q in self.queues])
            return self.now
