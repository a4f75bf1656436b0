"""Container image files.

Layout (little-endian)::

    "DCSF" | u16 format_version | container uuid (16) | u64 committed_version
    | u64 record_count | records... | u32 crc32c(everything after the magic)

    record: oid (16) | u16 dkey_len | dkey | u16 akey_len | akey | u64 offset
            | u64 length | u64 epoch | u32 crc32c(payload) | payload | u8 kind

Punch records (kind 1) carry no payload; an empty akey (and dkey) widens the
punch to the dkey (object).
"""

from __future__ import annotations

import os
import struct
import tempfile
import uuid
from dataclasses import dataclass
from pathlib import Path

from .checksum import crc32c
from .errors import ImageCorrupt
from .kvstore import ObjectId

MAGIC = b"DCSF"
FORMAT_VERSION = 1
WRITE, PUNCH = 0, 1

_HEADER = struct.Struct("<H16sQQ")
_TAIL = struct.Struct("<QQQI")


@dataclass(frozen=True)
class ImageRecord:
    oid: ObjectId
    dkey: bytes
    akey: bytes
    offset: int
    epoch: int
    crc: int
    payload: bytes
    kind: int = WRITE


@dataclass
class Image:
    container_id: uuid.UUID
    committed_version: int
    records: list[ImageRecord]


def encode(container_id: uuid.UUID, committed_version: int, records) -> bytes:
    records = list(records)
    parts = [_HEADER.pack(FORMAT_VERSION, container_id.bytes, committed_version, len(records))]
    for r in records:
        parts.append(r.oid.to_bytes())
        parts.append(struct.pack("<H", len(r.dkey)) + r.dkey)
        parts.append(struct.pack("<H", len(r.akey)) + r.akey)
        parts.append(_TAIL.pack(r.offset, len(r.payload), r.epoch, r.crc))
        parts.append(r.payload)
        parts.append(bytes([r.kind]))
    body = b"".join(parts)
    return MAGIC + body + struct.pack("<I", crc32c(body))


def decode(raw: bytes, verify_records: bool = True, verify_trailer: bool = True) -> Image:
    """Parse an image, raising ImageCorrupt on any structural or CRC failure."""
    if len(raw) < len(MAGIC) + _HEADER.size + 4 or raw[:4] != MAGIC:
        raise ImageCorrupt("missing DCSF magic or truncated header")
    body, (trailer,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if verify_trailer and crc32c(body) != trailer:
        raise ImageCorrupt("image trailer CRC mismatch")
    fmt, cid, version, count = _HEADER.unpack_from(body, 0)
    if fmt != FORMAT_VERSION:
        raise ImageCorrupt(f"unsupported format version {fmt}")
    pos = _HEADER.size
    records = []
    try:
        for i in range(count):
            oid = ObjectId.from_bytes(body[pos:pos + 16])
            pos += 16
            (dlen,) = struct.unpack_from("<H", body, pos)
            dkey = body[pos + 2:pos + 2 + dlen]
            pos += 2 + dlen
            (alen,) = struct.unpack_from("<H", body, pos)
            akey = body[pos + 2:pos + 2 + alen]
            pos += 2 + alen
            offset, length, epoch, crc = _TAIL.unpack_from(body, pos)
            pos += _TAIL.size
            payload = body[pos:pos + length]
            pos += length
            kind = body[pos]
            pos += 1
            if len(payload) != length or kind not in (WRITE, PUNCH):
                raise ImageCorrupt(f"record {i} malformed")
            if verify_records and kind == WRITE and crc32c(payload) != crc:
                raise ImageCorrupt(f"record {i} payload CRC mismatch")
            records.append(ImageRecord(oid, dkey, akey, offset, epoch, crc, payload, kind))
    except (struct.error, IndexError, ValueError) as exc:
        raise ImageCorrupt(f"truncated record stream: {exc}") from None
    if pos != len(body):
        raise ImageCorrupt("trailing bytes after last record")
    return Image(uuid.UUID(bytes=cid), version, records)


def check(raw: bytes) -> list[str]:
    """Return a list of problems found in an image (empty when it is sound)."""
    problems = []
    if len(raw) >= 8 and raw[:4] == MAGIC:
        if crc32c(raw[4:-4]) != struct.unpack("<I", raw[-4:])[0]:
            problems.append("image trailer CRC mismatch")
    try:
        image = decode(raw, verify_records=False, verify_trailer=False)
    except ImageCorrupt as exc:
        return problems + [str(exc)]
    for i, r in enumerate(image.records):
        if r.kind == WRITE and crc32c(r.payload) != r.crc:
            problems.append(f"record {i} payload CRC mismatch")
    return problems


def write_atomic(path: Path, raw: bytes) -> None:
    """Write-temp-then-rename so a failure leaves the previous file intact."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
