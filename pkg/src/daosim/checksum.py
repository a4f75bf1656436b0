"""CRC-32C (Castagnoli) checksums for payloads and container images.

Uses the ``crc32c`` extension when installed, otherwise a numba-compiled
table loop, otherwise plain Python.
"""

import numpy as np

_POLY = 0x82F63B78  # reflected Castagnoli polynomial


def _make_table() -> list[int]:
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        table.append(c)
    return table


_TABLE = _make_table()


def crc32c_py(data, crc: int = 0) -> int:
    """Table-driven CRC-32C, continuing from ``crc``."""
    table = _TABLE
    c = crc ^ 0xFFFFFFFF
    for b in bytes(data):
        c = table[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFF


try:  # pragma: no cover - depends on the environment
    from crc32c import crc32c as _native

    def crc32c(data, crc: int = 0) -> int:
        return _native(bytes(data), crc)

except ImportError:  # pragma: no cover
    try:
        import numba

        _NP_TABLE = np.array(_TABLE, dtype=np.uint32)

        @numba.njit(cache=True, nogil=True)
        def _crc_loop(buf, table, c):
            for i in range(buf.shape[0]):
                c = table[(c ^ buf[i]) & 0xFF] ^ (c >> 8)
            return c

        def crc32c(data, crc: int = 0) -> int:
            buf = np.frombuffer(data, dtype=np.uint8) if len(data) else np.empty(0, np.uint8)
            c = _crc_loop(buf, _NP_TABLE, np.uint32(crc ^ 0xFFFFFFFF))
            return int(c) ^ 0xFFFFFFFF

    except ImportError:
        crc32c = crc32c_py
