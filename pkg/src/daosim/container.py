"""Pools, containers, handles and the transaction state machine.

Transactions are numbered by the caller. They may finish in any order, but
the container version only advances over a contiguous prefix of completed
(finished, aborted or skipped) transactions. Writes of transaction ``n`` are
stored immediately with epoch ``n`` and become readable once the committed
version reaches ``n``.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from . import image
from .cluster import Cluster, ObjectLayout
from .errors import (
    ChecksumMismatch,
    DuplicateTransaction,
    NameExists,
    NotPersisted,
    ReadOnlyHandle,
    StaleHandle,
    TxNotOpen,
    UnknownContainer,
    UnknownPool,
    VersionNotCommitted,
)
from .checksum import crc32c
from .kvstore import Extent, ExtentWrite, FetchResult, ObjectId, TargetStore, _runs

logger = logging.getLogger(__name__)

OPEN, CLOSING, FINISHED, ABORTED, SKIPPED = "open", "closing", "finished", "aborted", "skipped"
_DONE = frozenset({FINISHED, ABORTED, SKIPPED})

_POOLS: dict[uuid.UUID, "Pool"] = {}
_POOLS_LOCK = threading.Lock()


def pool_create(n_targets: int, path=None, *, request_cost: float = 1.0,
                byte_cost: float = 0.0) -> "Pool":
    """Create a pool of ``n_targets`` targets, optionally backed by directory ``path``."""
    pool = Pool(uuid.uuid4(), Cluster(n_targets, request_cost, byte_cost), path)
    if pool.path is not None:
        pool.path.mkdir(parents=True, exist_ok=True)
        pool.save_metadata()
    with _POOLS_LOCK:
        _POOLS[pool.pool_id] = pool
    return pool


def pool_connect(pool_id, path=None) -> "Pool":
    """Look a pool up in this process, or load it from ``path`` when given."""
    if isinstance(pool_id, str):
        pool_id = uuid.UUID(pool_id)
    with _POOLS_LOCK:
        if pool_id in _POOLS:
            return _POOLS[pool_id]
    if path is not None:
        pool = Pool.load(path)
        if pool.pool_id == pool_id:
            return pool
    raise UnknownPool(str(pool_id))


@dataclass(frozen=True)
class PersistReceipt:
    container_id: uuid.UUID
    version: int
    nbytes: int
    location: str


class Pool:
    def __init__(self, pool_id: uuid.UUID, cluster: Cluster, path=None):
        self.pool_id = pool_id
        self.cluster = cluster
        self.path = Path(path) if path is not None else None
        self.containers: dict[str, Container] = {}
        self._images: dict[uuid.UUID, bytes] = {}
        self._lock = threading.RLock()

    @property
    def targets(self) -> list[int]:
        return list(range(self.cluster.n_targets))

    # -- namespace -----------------------------------------------------------

    def container_create(self, name: str) -> uuid.UUID:
        with self._lock:
            if name in self.containers:
                raise NameExists(name)
            cont = Container(self, name, uuid.uuid4())
            self.containers[name] = cont
            self.save_metadata()
            return cont.container_id

    def container_open(self, name: str, mode: str = "rw") -> "ContainerHandle":
        if mode not in ("r", "rw"):
            raise ValueError("mode must be 'r' or 'rw'")
        with self._lock:
            try:
                cont = self.containers[name]
            except KeyError:
                raise UnknownContainer(name) from None
        return ContainerHandle(cont, mode)

    def container_destroy(self, name: str) -> None:
        with self._lock:
            try:
                cont = self.containers.pop(name)
            except KeyError:
                raise UnknownContainer(name) from None
            cont.destroyed = True
            self._images.pop(cont.container_id, None)
            if self.path is not None:
                self._image_path(cont).unlink(missing_ok=True)
            self.save_metadata()

    # -- durable storage -----------------------------------------------------

    def _image_path(self, cont: "Container") -> Path:
        return self.path / f"{cont.container_id.hex}.dcsf"

    def store_image(self, cont: "Container", raw: bytes) -> str:
        if self.path is None:
            self._images[cont.container_id] = raw
            return f"memory:{cont.container_id}"
        target = self._image_path(cont)
        image.write_atomic(target, raw)
        return str(target)

    def load_image(self, cont: "Container") -> bytes | None:
        if self.path is None:
            return self._images.get(cont.container_id)
        p = self._image_path(cont)
        return p.read_bytes() if p.exists() else None

    def save_metadata(self) -> None:
        if self.path is None:
            return
        meta = {
            "pool_id": str(self.pool_id),
            "targets": self.cluster.n_targets,
            "request_cost": self.cluster.queues[0].request_cost,
            "byte_cost": self.cluster.queues[0].byte_cost,
            "containers": {name: str(c.container_id) for name, c in self.containers.items()},
        }
        image.write_atomic(self.path / "pool.json", json.dumps(meta, indent=1).encode())

    @classmethod
    def load(cls, path) -> "Pool":
        """Rebuild a pool from its directory, replaying each persisted image."""
        path = Path(path)
        meta_file = path / "pool.json"
        if not meta_file.exists():
            raise UnknownPool(f"no pool metadata under {path}")
        meta = json.loads(meta_file.read_text())
        cluster = Cluster(meta["targets"], meta.get("request_cost", 1.0),
                          meta.get("byte_cost", 0.0))
        pool = cls(uuid.UUID(meta["pool_id"]), cluster, path)
        for name, cid in meta["containers"].items():
            cont = Container(pool, name, uuid.UUID(cid))
            raw = pool.load_image(cont)
            if raw is not None:
                cont.restore(image.decode(raw))
            pool.containers[name] = cont
        with _POOLS_LOCK:
            _POOLS[pool.pool_id] = pool
        return pool

    def import_image(self, name: str, raw: bytes) -> "Container":
        """Create container ``name`` from an image.

        The image's id is kept unless a container of this pool already uses
        it, in which case the copy gets a fresh id.
        """
        img = image.decode(raw)
        with self._lock:
            if name in self.containers:
                raise NameExists(name)
            cid = img.container_id
            if any(c.container_id == cid for c in self.containers.values()):
                cid = uuid.uuid4()
                raw = image.encode(cid, img.committed_version, img.records)
            cont = Container(self, name, cid)
            cont.restore(img)
            self.containers[name] = cont
            self.store_image(cont, raw)
            self.save_metadata()
        return cont


class Container:
    """One object address space with its own per-target stores and ledger."""

    def __init__(self, pool: Pool, name: str, container_id: uuid.UUID):
        self.pool = pool
        self.name = name
        self.container_id = container_id
        self.stores = [TargetStore() for _ in range(pool.cluster.n_targets)]
        self.ledger: dict[int, str] = {}
        self.floor = 0  # every number <= floor is spent (restored from an image)
        self.committed_version = 0
        self.persisted_upto = 0
        self.agg_horizon = 0
        self.destroyed = False
        self._cond = threading.Condition()
        self._inflight: Counter = Counter()

    @property
    def cluster(self) -> Cluster:
        return self.pool.cluster

    # -- ledger --------------------------------------------------------------

    def _advance(self) -> None:
        v = self.committed_version
        while self.ledger.get(v + 1) in _DONE:
            v += 1
        self.committed_version = v

    def _claim(self, n: int, state: str) -> None:
        if not isinstance(n, int) or n < 1:
            raise ValueError("transaction numbers start at 1")
        if n <= self.floor or n in self.ledger:
            raise DuplicateTransaction(n)
        self.ledger[n] = state

    def _begin_close(self, n: int) -> None:
        """Stop new writes to ``n`` and wait for in-flight ones (lock held)."""
        if self.ledger.get(n) != OPEN:
            raise TxNotOpen(n)
        self.ledger[n] = CLOSING
        while self._inflight[n]:
            self._cond.wait()

    def finish(self, n: int) -> int:
        with self._cond:
            self._begin_close(n)
            self.ledger[n] = FINISHED
            self._advance()
            return self.committed_version

    def abort(self, n: int) -> int:
        with self._cond:
            self._begin_close(n)
            for t, store in enumerate(self.stores):
                self.cluster.queues[t].run(lambda: store.discard_epoch(n))
            self.ledger[n] = ABORTED
            self._advance()
            return self.committed_version

    def skip(self, n: int) -> int:
        with self._cond:
            self._claim(n, SKIPPED)
            self._advance()
            return self.committed_version

    def next_tx(self) -> int:
        with self._cond:
            return max([self.floor, *self.ledger]) + 1

    def check_version(self, version: int) -> None:
        with self._cond:
            if version < 0 or version > self.committed_version:
                raise VersionNotCommitted(f"version {version} > committed "
                                          f"{self.committed_version}")

    # -- data path -----------------------------------------------------------

    def layout(self, oid: ObjectId) -> ObjectLayout:
        return self.cluster.object_open(oid)

    def _tx_op(self, n: int, fn):
        with self._cond:
            if self.ledger.get(n) != OPEN:
                raise TxNotOpen(n)
            self._inflight[n] += 1
        try:
            return fn()
        finally:
            with self._cond:
                self._inflight[n] -= 1
                self._cond.notify_all()

    def fetch(self, version: int, oid, dkey, akey, extent: Extent) -> FetchResult:
        return self.cluster.route_fetch(self.stores, self.layout(oid), dkey, akey, extent, version)

    def _logical_records(self, max_epoch: int):
        """One copy of every record up to ``max_epoch``, taken from the first intact replica."""
        writes: dict[tuple, tuple[int, list]] = {}
        punches: dict[tuple, image.ImageRecord] = {}
        per_target = []
        for t, store in enumerate(self.stores):
            if self.cluster.queues[t].down:
                continue
            per_target.append((t, self.cluster.queues[t].run(lambda: list(store.records(max_epoch)))))
        for t, items in per_target:
            for oid, dkey, akey, rec in items:
                if rec.kind == 1:
                    key = (oid, dkey or b"", akey or b"", rec.epoch)
                    punches.setdefault(key, image.ImageRecord(oid, dkey or b"", akey or b"",
                                                              0, rec.epoch, 0, b"", image.PUNCH))
                    continue
                writes.setdefault((oid, dkey, akey), {}).setdefault(t, []).append(rec)
        out = []
        for (oid, dkey, akey), by_target in writes.items():
            chosen = None
            for t in self.layout(oid).targets(dkey):
                recs = by_target.get(t)
                if recs and all(r.verify() for r in recs):
                    chosen = recs
                    break
            if chosen is None:
                raise ChecksumMismatch(f"no intact replica of {oid!r}/{dkey!r}/{akey!r}")
            out.extend((r.epoch, 0, r.seq, image.ImageRecord(oid, dkey, akey, r.offset, r.epoch,
                                                             r.crc, bytes(r.payload)))
                       for r in chosen)
        out.extend((p.epoch, 1, 0, p) for p in punches.values())
        out.sort(key=lambda x: x[:3])
        return [x[3] for x in out]

    def logical_keys(self, max_epoch: int) -> list[tuple]:
        keys = {(r.oid, r.dkey, r.akey) for r in self._logical_records(max_epoch)
                if r.kind == image.WRITE}
        return sorted(keys)

    def restore(self, img: image.Image) -> None:
        """Load image records into empty stores; the image version becomes the floor."""
        cluster = self.cluster
        for r in img.records:
            layout = self.layout(r.oid)
            if r.kind == image.PUNCH:
                cluster.route_punch(self.stores, layout, r.dkey or None, r.akey or None,
                                    epoch=r.epoch)
            else:
                w = ExtentWrite(r.oid, r.dkey, r.akey, Extent(r.offset, len(r.payload)),
                                r.payload, r.crc, r.epoch)
                cluster.route_update(self.stores, layout, w, allow_base=True)
        self.floor = self.committed_version = self.persisted_upto = img.committed_version


class ContainerHandle:
    def __init__(self, container: Container, mode: str):
        self.container = container
        self.mode = mode
        self.handle_id = uuid.uuid4()
        self.closed = False

    def __repr__(self):
        return f"<ContainerHandle {self.container.name!r} {self.mode} {self.handle_id.hex[:8]}>"

    @property
    def pool(self) -> Pool:
        return self.container.pool

    def _live(self) -> Container:
        if self.closed or self.container.destroyed:
            raise StaleHandle(str(self.handle_id))
        return self.container

    def _writable(self) -> Container:
        cont = self._live()
        if self.mode != "rw":
            raise ReadOnlyHandle(str(self.handle_id))
        return cont

    def close(self) -> None:
        self._live()
        self.closed = True

    # -- transactions --------------------------------------------------------

    def tx_start(self, n: int) -> "TxContext":
        cont = self._writable()
        with cont._cond:
            cont._claim(n, OPEN)
        return TxContext(self, n)

    def tx_join(self, n: int) -> "TxContext":
        """Contribute writes from this handle to an already open transaction."""
        cont = self._writable()
        with cont._cond:
            if cont.ledger.get(n) != OPEN:
                raise TxNotOpen(n)
        return TxContext(self, n)

    def tx_skip(self, n: int) -> int:
        return self._writable().skip(n)

    def next_tx(self) -> int:
        return self._live().next_tx()

    def version(self) -> int:
        cont = self._live()
        with cont._cond:
            return cont.committed_version

    # -- reads ---------------------------------------------------------------

    def read_at(self, version: int, oid: ObjectId, dkey, akey, extent: Extent) -> FetchResult:
        cont = self._live()
        cont.check_version(version)
        return cont.fetch(version, oid, dkey, akey, extent)

    def list_at(self, version: int, oid: ObjectId) -> dict[bytes, list[bytes]]:
        cont = self._live()
        cont.check_version(version)
        return cont.cluster.route_list(cont.stores, cont.layout(oid), version)

    def bounds_at(self, version: int, oid: ObjectId, dkey, akey) -> tuple[int, int] | None:
        cont = self._live()
        cont.check_version(version)
        return cont.cluster.route_bounds(cont.stores, cont.layout(oid), dkey, akey, version)

    # -- durability ----------------------------------------------------------

    def persist(self, version: int) -> PersistReceipt:
        cont = self._live()
        cont.check_version(version)
        raw = image.encode(cont.container_id, version, cont._logical_records(version))
        location = cont.pool.store_image(cont, raw)
        with cont._cond:
            cont.persisted_upto = max(cont.persisted_upto, version)
        return PersistReceipt(cont.container_id, version, len(raw), location)

    def snapshot(self, version: int, name: str) -> uuid.UUID:
        """Clone persisted ``version`` into a new, independent container ``name``.

        The clone's version 0 shows exactly what ``read_at(version)`` shows here.
        """
        cont = self._live()
        if version > cont.persisted_upto:
            raise NotPersisted(f"version {version} not persisted (persisted up to "
                               f"{cont.persisted_upto})")
        pool = cont.pool
        with pool._lock:
            if name in pool.containers:
                raise NameExists(name)
            snap = Container(pool, name, uuid.uuid4())
            for oid, dkey, akey in cont.logical_keys(version):
                layout = cont.layout(oid)
                bounds = cont.cluster.route_bounds(cont.stores, layout, dkey, akey, version)
                if bounds is None:
                    continue
                res = cont.fetch(version, oid, dkey, akey, Extent(bounds[0], bounds[1] - bounds[0]))
                for a, b in _runs(~res.holes):
                    payload = res.data[a:b]
                    w = ExtentWrite(oid, dkey, akey, Extent(bounds[0] + a, b - a), payload,
                                    crc32c(payload), 0)
                    cont.cluster.route_update(snap.stores, layout, w, allow_base=True)
            pool.containers[name] = snap
            ContainerHandle(snap, "rw").persist(0)
            pool.save_metadata()
        return snap.container_id

    def aggregate(self, upto_version: int, oid_filter: ObjectId | None = None) -> int:
        cont = self._writable()
        cont.check_version(upto_version)
        reclaimed = 0
        for t, store in enumerate(cont.stores):
            reclaimed += cont.cluster.queues[t].run(
                lambda: store.aggregate(upto_version, oid_filter))
        with cont._cond:
            cont.agg_horizon = max(cont.agg_horizon, upto_version)
        return reclaimed


class TxContext:
    """Writes tagged with one transaction number through one handle."""

    def __init__(self, handle: ContainerHandle, n: int):
        self.handle = handle
        self.n = n

    def __repr__(self):
        return f"<TxContext n={self.n} {self.handle!r}>"

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.finish()
        else:
            try:
                self.abort()
            except TxNotOpen:
                pass
        return False

    def update(self, oid: ObjectId, dkey, akey, offset: int, payload) -> None:
        cont = self.handle._writable()
        write = ExtentWrite.build(oid, dkey, akey, offset, payload, self.n)
        cont._tx_op(self.n, lambda: cont.cluster.route_update(cont.stores, cont.layout(oid), write))

    def punch(self, oid: ObjectId, dkey=None, akey=None) -> None:
        cont = self.handle._writable()
        cont._tx_op(self.n, lambda: cont.cluster.route_punch(cont.stores, cont.layout(oid),
                                                             dkey, akey, epoch=self.n))

    def finish(self) -> int:
        return self.handle._writable().finish(self.n)

    def abort(self) -> int:
        return self.handle._writable().abort(self.n)
