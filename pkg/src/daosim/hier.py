"""Hierarchical files (groups, datasets, attributes) stored as key-array objects.

Every object keeps its metadata under the reserved dkey ``META``:

* ``kind`` -- ``group`` or ``dataset``
* ``L:<name>`` -- link to a child object id (groups)
* ``A:<name>`` -- attribute value
* ``shape`` / ``esize`` / ``layout`` / ``unlim`` -- dataset description

Dataset elements live under akey ``raw``: in one dkey ``DATA`` for the
contiguous layout (a single-target object) or one dkey per chunk, named by
its dot-joined chunk coordinates, for the chunked layout (a dkey-striped
object).
"""

from __future__ import annotations

import itertools
import math
import struct
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .cluster import OC_SINGLE, OC_STRIPED, hash64
from .container import ContainerHandle, Pool
from .errors import (
    BadLayout,
    DuplicateTransaction,
    LinkCycle,
    NameExists,
    NotFound,
    OutOfBounds,
    SizeMismatch,
    TooLarge,
    TxNotOpen,
)
from .kvstore import Extent, ObjectId

META = b"META"
DATA = b"DATA"
RAW = b"raw"
ROOT_OID = ObjectId.make(OC_SINGLE, 1)
MAX_DIMS = 4
MAX_ATTR = 64 * 1024
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class Contiguous:
    def encode(self) -> bytes:
        return b"contiguous"


@dataclass(frozen=True)
class Chunked:
    chunk_dims: tuple

    def encode(self) -> bytes:
        return b"chunked:" + ",".join(map(str, self.chunk_dims)).encode()


def decode_layout(raw: bytes):
    text = raw.decode()
    if text == "contiguous":
        return Contiguous()
    if text.startswith("chunked:"):
        return Chunked(tuple(int(x) for x in text[8:].split(",")))
    raise BadLayout(text)


def chunk_dims_for(dims, n_elements: int) -> tuple:
    """Chunk shape of about ``n_elements`` elements, filled from the fastest dimension.

    A zero-length (growable) dimension takes whatever budget is left.
    """
    out = []
    remaining = max(1, n_elements)
    for d in reversed(dims):
        take = max(1, min(d, remaining) if d > 0 else remaining)
        out.append(take)
        remaining = max(1, remaining // take)
    return tuple(reversed(out))


def _child_oid(parent: ObjectId, name: str, class_code: int) -> ObjectId:
    raw = parent.to_bytes() + name.encode()
    return ObjectId.make(class_code, hash64(raw), hi_bits=hash64(raw[::-1]))


def _pack_u64s(values) -> bytes:
    return struct.pack(f"<{len(values)}Q", *values)


def _unpack_u64s(raw: bytes) -> tuple:
    return struct.unpack(f"<{len(raw) // 8}Q", raw)


def _rows(offset, count, space):
    """Row-major rows ``(index_of_row_start, linear_start, n_elements)`` of a box in ``space``."""
    if not space:
        yield (), 0, 1
        return
    if any(c == 0 for c in count):
        return
    strides = [math.prod(space[i + 1:]) for i in range(len(space))]
    for lead in itertools.product(*(range(o, o + c) for o, c in zip(offset[:-1], count[:-1]))):
        idx = lead + (offset[-1],)
        yield idx, sum(i * s for i, s in zip(idx, strides)), count[-1]


def _merge(pieces):
    """Coalesce (dkey, dest, src, n) pieces contiguous on both sides."""
    out = []
    for p in pieces:
        if out:
            dkey, dest, src, n = out[-1]
            if dkey == p[0] and dest + n == p[1] and src + n == p[2]:
                out[-1] = (dkey, dest, src, n + p[3])
                continue
        out.append(p)
    return out


@dataclass
class SlabResult:
    """Elements of a hyperslab; ``holes`` marks elements never written."""

    data: bytes
    holes: np.ndarray

    @property
    def complete(self) -> bool:
        return not self.holes.any()

    def array(self, dtype) -> np.ndarray:
        return np.frombuffer(self.data, dtype=dtype).reshape(self.holes.shape)


class HierFile:
    """A container viewed as a hierarchy rooted at a group.

    In auto mode every top-level call runs in its own transaction, numbered
    with ``next_tx``. ``transaction()`` groups calls into one caller-numbered
    transaction instead.
    """

    def __init__(self, handle: ContainerHandle, auto: bool = True):
        self.handle = handle
        self.auto = auto
        self.read_version: int | None = None
        self._tx = None
        self._pending: dict[tuple, bytes] = {}

    @classmethod
    def create(cls, pool: Pool, name: str, auto: bool = True) -> "HierFile":
        pool.container_create(name)
        f = cls(pool.container_open(name, "rw"), auto)
        with f.transaction(1):
            f._put_meta(ROOT_OID, b"kind", b"group")
        return f

    @classmethod
    def open(cls, pool: Pool, name: str, mode: str = "rw", auto: bool = True) -> "HierFile":
        f = cls(pool.container_open(name, mode), auto)
        f.root  # noqa: B018 - validates the root group exists
        return f

    @property
    def pool(self) -> Pool:
        return self.handle.pool

    @property
    def root(self) -> "HierGroup":
        if self._get_meta(ROOT_OID, b"kind") != b"group":
            raise NotFound("root group not present at this version")
        return HierGroup(self, ROOT_OID, "/")

    def version(self) -> int:
        return self.handle.version()

    def persist(self, version: int | None = None):
        return self.handle.persist(self.version() if version is None else version)

    def close(self) -> None:
        self.handle.close()

    # -- transactions --------------------------------------------------------

    @contextmanager
    def transaction(self, n: int | None = None):
        """Run the enclosed calls in transaction ``n`` (default: next free number)."""
        if self._tx is not None:
            raise DuplicateTransaction("a transaction is already active on this file")
        tx = self._start(n)
        self._tx = tx
        try:
            yield tx
        except BaseException:
            self._tx = None
            self._pending.clear()
            tx.abort()
            raise
        self._tx = None
        self._pending.clear()
        tx.finish()

    @contextmanager
    def attach(self, tx):
        """Route the enclosed calls into ``tx``, which the caller finishes or aborts."""
        if self._tx is not None:
            raise DuplicateTransaction("a transaction is already active on this file")
        self._tx = tx
        try:
            yield tx
        finally:
            self._tx = None
            self._pending.clear()

    def _start(self, n):
        if n is not None:
            return self.handle.tx_start(n)
        while True:
            try:
                return self.handle.tx_start(self.handle.next_tx())
            except DuplicateTransaction:
                continue

    @contextmanager
    def _op(self):
        if self._tx is not None:
            yield self._tx
        elif self.auto:
            with self.transaction() as tx:
                yield tx
        else:
            raise TxNotOpen("explicit-transaction file: wrap writes in transaction()")

    @property
    def in_transaction(self) -> bool:
        return self._tx is not None

    # -- low level metadata --------------------------------------------------

    def _rv(self) -> int:
        return self.handle.version() if self.read_version is None else self.read_version

    def _put_meta(self, oid: ObjectId, akey: bytes, value: bytes) -> None:
        with self._op() as tx:
            tx.update(oid, META, akey, 0, _LEN.pack(len(value)) + value)
            self._pending[(oid, akey)] = value

    def _get_meta(self, oid: ObjectId, akey: bytes) -> bytes | None:
        if (oid, akey) in self._pending:
            return self._pending[(oid, akey)]
        v = self._rv()
        head = self.handle.read_at(v, oid, META, akey, Extent(0, 4))
        if head.holes.any():
            return None
        (n,) = _LEN.unpack(head.data)
        if n == 0:
            return b""
        body = self.handle.read_at(v, oid, META, akey, Extent(4, n))
        return body.data

    def _meta_keys(self, oid: ObjectId, prefix: bytes) -> list[str]:
        listing = self.handle.list_at(self._rv(), oid)
        names = {a[len(prefix):].decode() for a in listing.get(META, []) if a.startswith(prefix)}
        names.update(k[1][len(prefix):].decode() for k in self._pending
                     if k[0] == oid and k[1].startswith(prefix))
        return sorted(names)

    def _object(self, oid: ObjectId, path: str) -> "HierObject":
        kind = self._get_meta(oid, b"kind")
        if kind == b"group":
            return HierGroup(self, oid, path)
        if kind == b"dataset":
            return HierDataset(self, oid, path)
        raise NotFound(path)

    # -- paths ---------------------------------------------------------------

    def path_resolve(self, path: str) -> ObjectId:
        if not path.startswith("/"):
            raise ValueError("paths must be absolute")
        oid = self.root.oid
        walked = ""
        for part in (p for p in path.split("/") if p):
            walked += "/" + part
            child = self._get_meta(oid, b"L:" + part.encode())
            if child is None:
                raise NotFound(walked)
            oid = ObjectId.from_bytes(child)
        return oid

    def get(self, path: str) -> "HierObject":
        return self._object(self.path_resolve(path), path if path != "" else "/")

    def walk(self) -> list[str]:
        """Every path reachable from the root, sorted (the root itself excluded)."""
        out = []
        stack = [self.root]
        while stack:
            group = stack.pop()
            for name, oid in group.links().items():
                path = group.path.rstrip("/") + "/" + name
                out.append(path)
                obj = self._object(oid, path)
                if isinstance(obj, HierGroup):
                    stack.append(obj)
        return sorted(out)


class HierObject:
    def __init__(self, file: HierFile, oid: ObjectId, path: str):
        self.file = file
        self.oid = oid
        self.path = path

    def __repr__(self):
        return f"<{type(self).__name__} {self.path!r}>"

    def __eq__(self, other):
        return type(self) is type(other) and self.oid == other.oid

    def __hash__(self):
        return hash(self.oid)

    def attr_write(self, name: str, value: bytes) -> None:
        value = bytes(value)
        if len(value) > MAX_ATTR:
            raise TooLarge(f"attribute {name!r} is {len(value)} bytes (limit {MAX_ATTR})")
        self.file._put_meta(self.oid, b"A:" + name.encode(), value)

    def attr_read(self, name: str) -> bytes:
        value = self.file._get_meta(self.oid, b"A:" + name.encode())
        if value is None:
            raise NotFound(f"{self.path}@{name}")
        return value

    def attr_names(self) -> list[str]:
        return self.file._meta_keys(self.oid, b"A:")


class HierGroup(HierObject):
    def links(self) -> dict[str, ObjectId]:
        out = {}
        for name in self.file._meta_keys(self.oid, b"L:"):
            out[name] = ObjectId.from_bytes(self.file._get_meta(self.oid, b"L:" + name.encode()))
        return out

    def __contains__(self, name: str) -> bool:
        return self.file._get_meta(self.oid, b"L:" + name.encode()) is not None

    def _child_path(self, name: str) -> str:
        if not name or "/" in name:
            raise ValueError(f"bad link name {name!r}")
        return self.path.rstrip("/") + "/" + name

    def _add_link(self, name: str, oid: ObjectId) -> None:
        if name in self:
            raise NameExists(self._child_path(name))
        self.file._put_meta(self.oid, b"L:" + name.encode(), oid.to_bytes())

    def group_create(self, name: str) -> "HierGroup":
        path = self._child_path(name)
        with self.file._op():
            if name in self:
                raise NameExists(path)
            oid = _child_oid(self.oid, name, OC_SINGLE)
            self.file._put_meta(oid, b"kind", b"group")
            self._add_link(name, oid)
        return HierGroup(self.file, oid, path)

    def group_open(self, name: str) -> "HierGroup":
        obj = self._open(name)
        if not isinstance(obj, HierGroup):
            raise NotFound(f"{obj.path} is not a group")
        return obj

    def _open(self, name: str) -> HierObject:
        path = self._child_path(name)
        raw = self.file._get_meta(self.oid, b"L:" + name.encode())
        if raw is None:
            raise NotFound(path)
        return self.file._object(ObjectId.from_bytes(raw), path)

    def dataset_create(self, name: str, dims, element_size: int, layout=None, *,
                       unlimited: bool = False, class_code: int | None = None) -> "HierDataset":
        """Create a dataset; ``unlimited`` lets the first dimension grow later."""
        path = self._child_path(name)
        dims = tuple(int(d) for d in dims)
        layout = Contiguous() if layout is None else layout
        _validate(dims, element_size, layout, unlimited)
        if class_code is None:
            class_code = OC_SINGLE if isinstance(layout, Contiguous) else OC_STRIPED
        with self.file._op():
            if name in self:
                raise NameExists(path)
            oid = _child_oid(self.oid, name, class_code)
            put = self.file._put_meta
            put(oid, b"kind", b"dataset")
            put(oid, b"shape", _pack_u64s(dims))
            put(oid, b"esize", _pack_u64s([element_size]))
            put(oid, b"layout", layout.encode())
            put(oid, b"unlim", b"\x01" if unlimited else b"\x00")
            self._add_link(name, oid)
        ds = HierDataset(self.file, oid, path)
        ds._info = (dims, element_size, layout, unlimited)
        return ds

    def dataset_open(self, name: str) -> "HierDataset":
        obj = self._open(name)
        if not isinstance(obj, HierDataset):
            raise NotFound(f"{obj.path} is not a dataset")
        return obj

    def link(self, name: str, target: HierObject) -> None:
        """Hard-link an existing object; refuses links that would form a cycle."""
        if isinstance(target, HierGroup) and (target.oid == self.oid or self._reachable_from(target)):
            raise LinkCycle(f"linking {target.path} under {self.path} forms a cycle")
        self._add_link(name, target.oid)

    def _reachable_from(self, start: "HierGroup") -> bool:
        seen, stack = set(), [start]
        while stack:
            g = stack.pop()
            if g.oid in seen:
                continue
            seen.add(g.oid)
            for name, oid in g.links().items():
                if oid == self.oid:
                    return True
                child = self.file._object(oid, g._child_path(name))
                if isinstance(child, HierGroup):
                    stack.append(child)
        return False


def _validate(dims, element_size, layout, unlimited):
    if len(dims) > MAX_DIMS:
        raise BadLayout(f"at most {MAX_DIMS} dimensions")
    if element_size < 1:
        raise BadLayout("element size must be >= 1")
    if any(d < 0 for d in dims) or any(d == 0 for d in dims[1:]):
        raise BadLayout(f"bad dimensions {dims}")
    if unlimited and not dims:
        raise BadLayout("a scalar dataset cannot be unlimited")
    if dims and dims[0] == 0 and not unlimited:
        raise BadLayout("only an unlimited first dimension may start empty")
    if isinstance(layout, Chunked):
        ch = layout.chunk_dims
        if len(ch) != len(dims) or not dims:
            raise BadLayout("chunk rank must match dataset rank")
        for i, (c, d) in enumerate(zip(ch, dims)):
            if c < 1 or (c > d and not (i == 0 and unlimited)):
                raise BadLayout(f"chunk dims {ch} incompatible with {dims}")
    elif not isinstance(layout, Contiguous):
        raise BadLayout(repr(layout))


class HierDataset(HierObject):
    """Dataset handle; its description is read once and cached (see ``refresh``)."""

    def __init__(self, file: HierFile, oid: ObjectId, path: str):
        super().__init__(file, oid, path)
        self._info = None

    def _meta(self, akey: bytes) -> bytes:
        value = self.file._get_meta(self.oid, akey)
        if value is None:
            raise NotFound(f"{self.path} missing {akey.decode()}")
        return value

    def refresh(self) -> None:
        self._info = (_unpack_u64s(self._meta(b"shape")), _unpack_u64s(self._meta(b"esize"))[0],
                      decode_layout(self._meta(b"layout")), self._meta(b"unlim") == b"\x01")

    def _described(self):
        if self._info is None:
            self.refresh()
        return self._info

    @property
    def dims(self) -> tuple:
        return self._described()[0]

    @property
    def element_size(self) -> int:
        return self._described()[1]

    @property
    def layout(self):
        return self._described()[2]

    @property
    def unlimited(self) -> bool:
        return self._described()[3]

    def extend(self, first_dim: int) -> None:
        """Grow the unlimited first dimension to ``first_dim`` (never shrinks)."""
        if not self.unlimited:
            raise OutOfBounds(f"{self.path} has no unlimited dimension")
        dims = self.dims
        if first_dim > dims[0]:
            new = (first_dim,) + dims[1:]
            self.file._put_meta(self.oid, b"shape", _pack_u64s(new))
            self._info = (new,) + self._info[1:]

    def _pieces(self, offset, count, dims, layout):
        """(dkey, element offset in the stored array, element offset in the slab, n)."""
        slab_strides = [math.prod(count[i + 1:]) for i in range(len(count))]
        if isinstance(layout, Contiguous):
            return _merge((DATA, start, src, n) for src, (_, start, n) in
                          zip(itertools.count(0, count[-1] if count else 1),
                              _rows(offset, count, dims)))
        ch = layout.chunk_dims
        ranges = [range(o // c, (o + n - 1) // c + 1) for o, n, c in zip(offset, count, ch)]
        pieces = []
        for coord in itertools.product(*ranges):
            origin = [k * c for k, c in zip(coord, ch)]
            lo = [max(o, g) for o, g in zip(offset, origin)]
            hi = [min(o + n, g + c) for o, n, g, c in zip(offset, count, origin, ch)]
            local = [a - g for a, g in zip(lo, origin)]
            box = [b - a for a, b in zip(lo, hi)]
            dkey = ".".join(map(str, coord)).encode()
            for idx, start, n in _rows(local, box, ch):
                src = sum((i + g - o) * s for i, g, o, s in zip(idx, origin, offset, slab_strides))
                pieces.append((dkey, start, src, n))
        return _merge(pieces)

    def _check_slab(self, offset, count, dims):
        offset, count = tuple(offset), tuple(count)
        if len(offset) != len(dims) or len(count) != len(dims):
            raise OutOfBounds(f"hyperslab rank does not match {dims}")
        for o, c, d in zip(offset, count, dims):
            if o < 0 or c < 0 or o + c > d:
                raise OutOfBounds(f"hyperslab {offset}+{count} outside {dims}")
        return offset, count

    def write(self, offset, count, payload) -> None:
        dims, esize, layout = self.dims, self.element_size, self.layout
        offset, count = self._check_slab(offset, count, dims)
        payload = payload.tobytes() if isinstance(payload, np.ndarray) else bytes(payload)
        if len(payload) != math.prod(count) * esize:
            raise SizeMismatch(f"payload {len(payload)} B for slab of {math.prod(count)} "
                               f"x {esize} B")
        with self.file._op() as tx:
            for dkey, start, src, n in self._pieces(offset, count, dims, layout):
                if n:
                    tx.update(self.oid, dkey, RAW, start * esize,
                              payload[src * esize:(src + n) * esize])

    def read(self, offset=None, count=None) -> SlabResult:
        dims, esize, layout = self.dims, self.element_size, self.layout
        offset = (0,) * len(dims) if offset is None else offset
        count = dims if count is None else count
        offset, count = self._check_slab(offset, count, dims)
        total = math.prod(count)
        data = bytearray(total * esize)
        holes = np.ones(total, dtype=bool)
        f = self.file
        v = f._rv()
        for dkey, start, src, n in self._pieces(offset, count, dims, layout):
            if not n:
                continue
            res = f.handle.read_at(v, self.oid, dkey, RAW, Extent(start * esize, n * esize))
            data[src * esize:(src + n) * esize] = res.data
            holes[src:src + n] = res.holes.reshape(n, esize).any(axis=1)
        return SlabResult(bytes(data), holes.reshape(count))
