"""Per-target versioned key-array store.

Every update is kept as an immutable record tagged with its epoch. A fetch at
epoch ``e`` replays the records with epoch <= ``e`` in (epoch, ingestion)
order; punches are tombstones that hide every write of the same or an older
epoch. Aggregation flattens history below a horizon into one record per
contiguous visible run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .checksum import crc32c
from .errors import BadExtent, BadKey, ChecksumMismatch

logger = logging.getLogger(__name__)

MAX_KEY_LEN = 256
U64_MAX = (1 << 64) - 1


@dataclass(frozen=True, order=True)
class ObjectId:
    """128-bit object identifier; the top byte of ``hi`` is the object class."""

    hi: int
    lo: int

    def __post_init__(self):
        if not (0 <= self.hi <= U64_MAX and 0 <= self.lo <= U64_MAX):
            raise ValueError("ObjectId halves must be unsigned 64-bit")

    @classmethod
    def make(cls, class_code: int, lo: int, hi_bits: int = 0) -> "ObjectId":
        if not 0 <= class_code <= 0xFF:
            raise ValueError("class code must fit in one byte")
        return cls((class_code << 56) | (hi_bits & ((1 << 56) - 1)), lo)

    @property
    def class_code(self) -> int:
        return self.hi >> 56

    def to_bytes(self) -> bytes:
        return self.hi.to_bytes(8, "little") + self.lo.to_bytes(8, "little")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ObjectId":
        if len(raw) != 16:
            raise ValueError("ObjectId needs exactly 16 bytes")
        return cls(int.from_bytes(raw[:8], "little"), int.from_bytes(raw[8:], "little"))

    def __repr__(self):
        return f"ObjectId({self.hi:#018x}, {self.lo:#018x})"


def as_key(key) -> bytes:
    """Normalise a dkey/akey to bytes and enforce the 1..256 length rule."""
    if isinstance(key, str):
        key = key.encode()
    key = bytes(key)
    if not 1 <= len(key) <= MAX_KEY_LEN:
        raise BadKey(f"key length {len(key)} outside 1..{MAX_KEY_LEN}")
    return key


@dataclass(frozen=True)
class Extent:
    offset: int
    length: int

    def __post_init__(self):
        if self.offset < 0 or self.length < 1:
            raise BadExtent(f"bad extent offset={self.offset} length={self.length}")
        if self.offset + self.length > U64_MAX + 1:
            raise BadExtent("extent overflows 64 bits")

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class ExtentWrite:
    oid: ObjectId
    dkey: bytes
    akey: bytes
    extent: Extent
    payload: bytes
    checksum: int
    epoch: int

    @classmethod
    def build(cls, oid, dkey, akey, offset: int, payload, epoch: int) -> "ExtentWrite":
        """Create a write whose checksum is computed from ``payload`` (client side)."""
        payload = bytes(payload)
        if len(payload) == 0:
            raise BadExtent("zero-length write")
        return cls(oid, as_key(dkey), as_key(akey), Extent(offset, len(payload)),
                   payload, crc32c(payload), epoch)


@dataclass
class FetchResult:
    """Bytes of a fetched extent plus a per-byte hole mask (True = never written)."""

    data: bytes
    holes: np.ndarray

    @property
    def complete(self) -> bool:
        return not self.holes.any()

    def checksum(self) -> int:
        return crc32c(self.data)

    def __eq__(self, other):
        if not isinstance(other, FetchResult):
            return NotImplemented
        return self.data == other.data and np.array_equal(self.holes, other.holes)


@dataclass
class Record:
    """One stored update (kind 0) or punch tombstone (kind 1)."""

    epoch: int
    seq: int
    offset: int = 0
    payload: bytearray = field(default_factory=bytearray)
    crc: int = 0
    kind: int = 0

    @property
    def end(self) -> int:
        return self.offset + len(self.payload)

    def verify(self) -> bool:
        return crc32c(self.payload) == self.crc


def _sort_key(rec: Record):
    # tombstones order after writes of the same epoch so they shadow them
    return (rec.epoch, rec.kind, rec.seq)


class TargetStore:
    """Epoch-versioned extent store for one storage target."""

    def __init__(self):
        self._data: dict[tuple, list[Record]] = {}
        self._punches: dict[tuple, list[Record]] = {}
        self._seq = 0

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    # -- updates -------------------------------------------------------------

    def update(self, write: ExtentWrite, allow_base: bool = False) -> None:
        """Record ``write``. Epoch 0 is reserved for snapshot/base images."""
        if write.epoch < 0 or (write.epoch == 0 and not allow_base):
            raise ValueError("write epoch must be > 0")
        if len(write.payload) != write.extent.length:
            raise BadExtent("payload length does not match extent")
        if crc32c(write.payload) != write.checksum:
            raise ChecksumMismatch("update payload does not match its checksum")
        key = (write.oid, as_key(write.dkey), as_key(write.akey))
        records = self._data.setdefault(key, [])
        for rec in records:
            if (rec.epoch == write.epoch and rec.offset < write.extent.end
                    and write.extent.offset < rec.end):
                logger.warning("overlapping writes in epoch %d on %r; last ingested wins",
                               write.epoch, key)
                break
        records.append(Record(write.epoch, self._next_seq(), write.extent.offset,
                              bytearray(write.payload), write.checksum))

    def punch(self, oid: ObjectId, dkey=None, akey=None, *, epoch: int) -> None:
        """Tombstone an object, a dkey or an akey at ``epoch``."""
        if epoch < 1:
            raise ValueError("punch epoch must be > 0")
        if akey is not None and dkey is None:
            raise ValueError("akey punch needs a dkey")
        scope = (oid,)
        if dkey is not None:
            scope += (as_key(dkey),)
        if akey is not None:
            scope += (as_key(akey),)
        self._punches.setdefault(scope, []).append(Record(epoch, self._next_seq(), kind=1))

    # -- reads ---------------------------------------------------------------

    def _tombstones(self, key: tuple, epoch: int) -> list[Record]:
        oid, dkey, _ = key
        out = []
        for scope in ((oid,), (oid, dkey), key):
            out.extend(p for p in self._punches.get(scope, ()) if p.epoch <= epoch)
        return out

    def fetch(self, oid: ObjectId, dkey, akey, extent: Extent, epoch: int) -> FetchResult:
        key = (oid, as_key(dkey), as_key(akey))
        lo, hi = extent.offset, extent.end
        n = extent.length
        buf = bytearray(n)
        present = bytearray(n)
        events = [r for r in self._data.get(key, ())
                  if r.epoch <= epoch and r.offset < hi and lo < r.end]
        for rec in events:
            if not rec.verify():
                raise ChecksumMismatch(f"stored payload corrupt for {key!r} epoch {rec.epoch}")
        events.extend(self._tombstones(key, epoch))
        events.sort(key=_sort_key)
        for rec in events:
            if rec.kind == 1:
                buf[:] = bytes(n)
                present[:] = bytes(n)
                continue
            a, b = max(lo, rec.offset), min(hi, rec.end)
            buf[a - lo:b - lo] = rec.payload[a - rec.offset:b - rec.offset]
            present[a - lo:b - lo] = b"\x01" * (b - a)
        holes = np.frombuffer(bytes(present), dtype=np.uint8) == 0
        return FetchResult(bytes(buf), holes)

    def _key_visible(self, key: tuple, epoch: int) -> bool:
        writes = [r.epoch for r in self._data.get(key, ()) if r.epoch <= epoch]
        if not writes:
            return False
        tombs = [t.epoch for t in self._tombstones(key, epoch)]
        return not tombs or max(writes) > max(tombs)

    def list(self, oid: ObjectId, epoch: int) -> dict[bytes, list[bytes]]:
        """Visible dkeys of ``oid`` at ``epoch`` mapped to their visible akeys, sorted."""
        out: dict[bytes, list[bytes]] = {}
        for key in self._data:
            if key[0] == oid and self._key_visible(key, epoch):
                out.setdefault(key[1], []).append(key[2])
        return {d: sorted(out[d]) for d in sorted(out)}

    def extent_bounds(self, oid: ObjectId, dkey, akey, epoch: int) -> tuple[int, int] | None:
        """Smallest [start, end) covering all records of a key up to ``epoch``."""
        recs = [r for r in self._data.get((oid, as_key(dkey), as_key(akey)), ())
                if r.epoch <= epoch]
        if not recs:
            return None
        return min(r.offset for r in recs), max(r.end for r in recs)

    # -- maintenance ---------------------------------------------------------

    def aggregate(self, upto_epoch: int, oid_filter: ObjectId | None = None) -> int:
        """Flatten history at or below ``upto_epoch``; return reclaimed payload bytes.

        Reads at epochs >= ``upto_epoch`` are unchanged. History below the
        horizon is discarded.
        """
        reclaimed = 0
        for key in list(self._data):
            if oid_filter is not None and key[0] != oid_filter:
                continue
            records = self._data[key]
            old = [r for r in records if r.epoch <= upto_epoch]
            if not old:
                continue
            keep = [r for r in records if r.epoch > upto_epoch]
            start = min(r.offset for r in old)
            end = max(r.end for r in old)
            merged = self.fetch(key[0], key[1], key[2], Extent(start, end - start), upto_epoch)
            new = []
            for a, b in _runs(~merged.holes):
                payload = bytearray(merged.data[a:b])
                new.append(Record(upto_epoch, self._next_seq(), start + a, payload,
                                  crc32c(payload)))
            reclaimed += sum(len(r.payload) for r in old) - sum(len(r.payload) for r in new)
            if new or keep:
                self._data[key] = new + keep
            else:
                del self._data[key]
        for scope in list(self._punches):
            if oid_filter is not None and scope[0] != oid_filter:
                continue
            rest = [p for p in self._punches[scope] if p.epoch > upto_epoch]
            if rest:
                self._punches[scope] = rest
            else:
                del self._punches[scope]
        return reclaimed

    def discard_epoch(self, epoch: int) -> int:
        """Drop every record and tombstone tagged with ``epoch``; return records dropped."""
        dropped = 0
        for table in (self._data, self._punches):
            for key in list(table):
                rest = [r for r in table[key] if r.epoch != epoch]
                dropped += len(table[key]) - len(rest)
                if rest:
                    table[key] = rest
                else:
                    del table[key]
        return dropped

    def records(self, max_epoch: int | None = None):
        """Yield ``(oid, dkey, akey, Record)`` in replay order; dkey/akey may be None for punches."""
        items = []
        for (oid, dkey, akey), recs in self._data.items():
            items.extend((oid, dkey, akey, r) for r in recs)
        for scope, recs in self._punches.items():
            oid, dkey, akey = (scope + (None, None))[:3]
            items.extend((oid, dkey, akey, r) for r in recs)
        items.sort(key=lambda it: (_sort_key(it[3]), it[0]))
        for it in items:
            if max_epoch is None or it[3].epoch <= max_epoch:
                yield it

    def stored_bytes(self) -> int:
        return sum(len(r.payload) for recs in self._data.values() for r in recs)

    def flip_bit(self, oid: ObjectId, dkey, akey, bit: int) -> None:
        """Flip one stored payload bit of a key, counting across its records in order."""
        for rec in self._data[(oid, as_key(dkey), as_key(akey))]:
            nbits = len(rec.payload) * 8
            if bit < nbits:
                rec.payload[bit // 8] ^= 1 << (bit % 8)
                return
            bit -= nbits
        raise IndexError("bit index beyond stored payload")

    def payload_bits(self, oid: ObjectId, dkey, akey) -> int:
        return sum(len(r.payload) * 8 for r in self._data.get((oid, as_key(dkey), as_key(akey)), ()))


def _runs(mask: np.ndarray):
    """[start, end) index pairs of the True runs in a boolean mask."""
    if mask.size == 0:
        return []
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))
