"""NetCDF-style dimensions, variables and attributes on top of :mod:`daosim.hier`.

Naming scheme, all at the root group:

* dimension ``x`` is a scalar u64 dataset ``DIM_x`` holding its length, or
  :data:`UNLIMITED` (all ones) for the growable dimension;
* variable ``v`` is a dataset ``VAR_v``; its dimensions are listed, as
  absolute paths, in the hidden attribute ``DIMENSION_LIST``;
* attribute ``a`` on a variable or on the file is the hier attribute ``ATT_a``.

A variable over an unlimited dimension keeps its live length in the hidden
attribute ``ATT__cur0``, since the dimension dataset only holds the sentinel.
Because dimensions and variables live under different prefixes, a coordinate
variable ``x`` over dimension ``x`` needs no special casing.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .container import Pool
from .errors import (
    CollectiveRequired,
    NameExists,
    NotFound,
    OutOfBounds,
    UnknownDimension,
    UnlimitedNotSlowest,
)
from .hier import Chunked, Contiguous, HierDataset, HierFile

UNLIMITED = 0xFFFF_FFFF_FFFF_FFFF
DIM_PREFIX = "DIM_"
VAR_PREFIX = "VAR_"
ATT_PREFIX = "ATT_"
DIMENSION_LIST = "DIMENSION_LIST"
CUR_LENGTH = "ATT__cur0"
PREFIXES = (DIM_PREFIX, VAR_PREFIX, ATT_PREFIX)
_U64 = struct.Struct("<Q")


def _check_name(name: str) -> str:
    if not isinstance(name, str) or not name or "/" in name:
        raise ValueError(f"bad name {name!r}")
    return name


@dataclass(frozen=True)
class NcDimension:
    name: str
    length: int  # UNLIMITED for the growable dimension

    @property
    def unlimited(self) -> bool:
        return self.length == UNLIMITED

    @property
    def path(self) -> str:
        return "/" + DIM_PREFIX + self.name


class NcFile:
    """One NetCDF-like file, backed by one container.

    Reads go to the latest committed version unless ``read_version`` is set.
    Growing an unlimited dimension needs an explicit :meth:`transaction`:
    that stands in for the collective call all writers would make together.
    """

    def __init__(self, hfile: HierFile):
        self.h = hfile

    @classmethod
    def create(cls, pool: Pool, name: str) -> "NcFile":
        return cls(HierFile.create(pool, name))

    @classmethod
    def open(cls, pool: Pool, name: str, mode: str = "rw") -> "NcFile":
        return cls(HierFile.open(pool, name, mode))

    @property
    def read_version(self) -> int | None:
        return self.h.read_version

    @read_version.setter
    def read_version(self, v: int | None) -> None:
        self.h.read_version = v

    def version(self) -> int:
        return self.h.version()

    def persist(self, version: int | None = None):
        return self.h.persist(version)

    def close(self) -> None:
        self.h.close()

    def transaction(self, n: int | None = None):
        return self.h.transaction(n)

    @property
    def in_transaction(self) -> bool:
        return self.h.in_transaction

    # -- dimensions ----------------------------------------------------------

    def def_dim(self, name: str, length: int) -> NcDimension:
        _check_name(name)
        if length != UNLIMITED and length < 1:
            raise ValueError("fixed dimensions need length >= 1")
        root = self.h.root
        if DIM_PREFIX + name in root:
            raise NameExists(f"dimension {name!r}")
        with self.h._op():
            ds = root.dataset_create(DIM_PREFIX + name, (), 8)
            ds.write((), (), _U64.pack(length))
        return NcDimension(name, length)

    def dim(self, name: str) -> NcDimension:
        try:
            ds = self.h.root.dataset_open(DIM_PREFIX + name)
        except NotFound:
            raise UnknownDimension(name) from None
        return NcDimension(name, _U64.unpack(ds.read().data)[0])

    def dims(self) -> list[NcDimension]:
        return [self.dim(n[len(DIM_PREFIX):]) for n in self.h.root.links()
                if n.startswith(DIM_PREFIX)]

    # -- variables -----------------------------------------------------------

    def def_var(self, name: str, dim_names, element_size: int, layout=None) -> "NcVariable":
        """Define ``name`` over ``dim_names`` (slowest first)."""
        _check_name(name)
        dims = [self.dim(d) for d in dim_names]
        for i, d in enumerate(dims):
            if d.unlimited and i != 0:
                raise UnlimitedNotSlowest(f"{d.name!r} is unlimited but in slot {i}")
        root = self.h.root
        if VAR_PREFIX + name in root:
            raise NameExists(f"variable {name!r}")
        unlimited = bool(dims) and dims[0].unlimited
        shape = tuple(0 if d.unlimited else d.length for d in dims)
        with self.h._op():
            ds = root.dataset_create(VAR_PREFIX + name, shape, element_size, layout,
                                     unlimited=unlimited)
            ds.attr_write(DIMENSION_LIST, json.dumps([d.path for d in dims]).encode())
            if unlimited:
                ds.attr_write(CUR_LENGTH, _U64.pack(0))
        return NcVariable(self, name, ds)

    def var(self, name: str) -> "NcVariable":
        try:
            ds = self.h.root.dataset_open(VAR_PREFIX + name)
        except NotFound:
            raise NotFound(f"variable {name!r}") from None
        return NcVariable(self, name, ds)

    def variables(self) -> list[str]:
        return [n[len(VAR_PREFIX):] for n in self.h.root.links() if n.startswith(VAR_PREFIX)]

    # -- global attributes ---------------------------------------------------

    def put_att(self, name: str, value) -> None:
        _put_att(self.h.root, name, value)

    def get_att(self, name: str) -> bytes:
        return _get_att(self.h.root, name)

    def inq_atts(self) -> list[str]:
        return _visible_atts(self.h.root)


class NcVariable:
    def __init__(self, nc: NcFile, name: str, ds: HierDataset):
        self.nc = nc
        self.name = name
        self.ds = ds
        self._dims = None

    def __repr__(self):
        return f"<NcVariable {self.name!r}>"

    @property
    def element_size(self) -> int:
        return self.ds.element_size

    @property
    def unlimited(self) -> bool:
        return self.ds.unlimited

    def dim_paths(self) -> list[str]:
        return json.loads(self.ds.attr_read(DIMENSION_LIST))

    def current_length(self) -> int | None:
        """Live length of the unlimited dimension (``None`` if there is none)."""
        if not self.unlimited:
            return None
        return _U64.unpack(self.ds.attr_read(CUR_LENGTH))[0]

    def dimensions(self) -> list[NcDimension]:
        # fixed once the variable is defined, so read only once
        if self._dims is None:
            self._dims = [self.nc.dim(p.rsplit("/", 1)[1][len(DIM_PREFIX):])
                          for p in self.dim_paths()]
        return self._dims

    def shape(self) -> tuple:
        return tuple(self.current_length() if d.unlimited else d.length
                     for d in self.dimensions())

    def inq_dims(self) -> list[tuple[str, int, bool]]:
        """``[(name, length, unlimited), ...]``, slowest dimension first."""
        return [(d.name, n, d.unlimited) for d, n in zip(self.dimensions(), self.shape())]

    def put_vara(self, start, count, payload) -> None:
        start, count = tuple(start), tuple(count)
        shape = self.shape()
        if len(start) != len(shape) or len(count) != len(shape):
            raise OutOfBounds(f"rank mismatch for {self.name!r} of shape {shape}")
        if any(s < 0 or c < 0 for s, c in zip(start, count)):
            raise OutOfBounds("negative start or count")
        if self.unlimited and start[0] + count[0] > shape[0]:
            if not self.nc.in_transaction:
                raise CollectiveRequired(
                    f"growing {self.name!r} needs an explicit transaction")
            new = start[0] + count[0]
            with self.nc.h._op():
                self.ds.extend(new)
                self.ds.attr_write(CUR_LENGTH, _U64.pack(new))
        else:
            for s, c, d in zip(start, count, shape):
                if s + c > d:
                    raise OutOfBounds(f"{start}+{count} outside {shape}")
        self._fresh(start[0] + count[0] if start else 0)
        self.ds.write(start, count, payload)

    def _fresh(self, rows: int) -> None:
        # another handle may have grown the dataset since ours was described
        if self.unlimited and self.ds.dims[0] < rows:
            self.ds.refresh()

    def get_vara(self, start=None, count=None) -> bytes:
        shape = self.shape()
        start = (0,) * len(shape) if start is None else tuple(start)
        count = shape if count is None else tuple(count)
        if len(start) != len(shape) or len(count) != len(shape):
            raise OutOfBounds(f"rank mismatch for {self.name!r} of shape {shape}")
        for s, c, d in zip(start, count, shape):
            if s < 0 or c < 0 or s + c > d:
                raise OutOfBounds(f"{start}+{count} outside {shape}")
        if math.prod(count) == 0:
            return b""
        self._fresh(start[0] + count[0] if start else 0)
        # the dataset itself may be longer than this reader's view of the variable
        return self.ds.read(start, count).data

    def get_array(self, dtype, start=None, count=None) -> np.ndarray:
        count = self.shape() if count is None and start is None else count
        raw = self.get_vara(start, count)
        return np.frombuffer(raw, dtype=dtype).reshape(tuple(count))

    def put_att(self, name: str, value) -> None:
        _put_att(self.ds, name, value)

    def get_att(self, name: str) -> bytes:
        return _get_att(self.ds, name)

    def inq_atts(self) -> list[str]:
        return _visible_atts(self.ds)


def _put_att(obj, name: str, value) -> None:
    _check_name(name)
    if name.startswith("_"):
        raise ValueError("attribute names starting with '_' are reserved")
    if isinstance(value, str):
        value = value.encode()
    elif isinstance(value, np.ndarray):
        value = value.tobytes()
    obj.attr_write(ATT_PREFIX + name, value)


def _get_att(obj, name: str) -> bytes:
    try:
        return obj.attr_read(ATT_PREFIX + name)
    except NotFound:
        raise NotFound(f"attribute {name!r}") from None


def _visible_atts(obj) -> list[str]:
    return [n[len(ATT_PREFIX):] for n in obj.attr_names()
            if n.startswith(ATT_PREFIX) and not n[len(ATT_PREFIX):].startswith("_")]


def namespace_problems(nc: NcFile) -> list[str]:
    """Scan the whole container for names outside the prefix scheme.

    Objects must be ``DIM_`` or ``VAR_`` datasets, attributes must carry
    ``ATT_``; the hidden ``DIMENSION_LIST`` is the one exempt attribute.
    Returns a list of human-readable problems (empty when conforming).
    """
    problems = []
    h = nc.h
    root = h.root
    for name in root.attr_names():
        if not name.startswith(ATT_PREFIX):
            problems.append(f"/@{name}: attribute without {ATT_PREFIX}")
    for path in h.walk():
        name = path.rsplit("/", 1)[1]
        carried = [p for p in PREFIXES if name.startswith(p)]
        if path.count("/") != 1:
            problems.append(f"{path}: nested object")
        if len(carried) != 1 or carried[0] == ATT_PREFIX:
            problems.append(f"{path}: object name needs exactly one of DIM_/VAR_")
        obj = h.get(path)
        if not isinstance(obj, HierDataset):
            problems.append(f"{path}: not a dataset")
            continue
        for att in obj.attr_names():
            if att != DIMENSION_LIST and not att.startswith(ATT_PREFIX):
                problems.append(f"{path}@{att}: attribute without {ATT_PREFIX}")
        if name.startswith(DIM_PREFIX) and (obj.dims != () or obj.element_size != 8):
            problems.append(f"{path}: dimension is not a scalar u64")
    return problems


__all__ = [
    "UNLIMITED", "NcDimension", "NcFile", "NcVariable", "namespace_problems",
    "Chunked", "Contiguous",
]
