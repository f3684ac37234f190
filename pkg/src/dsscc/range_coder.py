"""Bit-exact range coding against CdfTables, plus the two-stream
bitstream container.

The coder is a 32-bit byte-wise range coder with carry-less
renormalization: when the active interval straddles a byte boundary and
has shrunk below 2**16 it is truncated up to the boundary instead of
propagating carries. Encoding is fully integer-deterministic, so equal
inputs give byte-identical streams on every platform.
"""

import struct
import zlib

import numpy as np

from .entropy import CDF_TOTAL, CdfTable, escape_table

_TOP = 1 << 24
_BOT = 1 << 16
_M32 = (1 << 32) - 1


class RangeCoderError(RuntimeError):
    pass


class FormatError(RangeCoderError):
    """Container magic/version is wrong."""


class FrameCorrupt(RangeCoderError):
    """Container fails CRC or is structurally truncated."""


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range_ = _M32
        self.out = bytearray()

    def encode(self, cum_lo, cum_hi, total=CDF_TOTAL):
        r = self.range_ // total
        self.low = (self.low + r * cum_lo) & _M32
        self.range_ = r * (cum_hi - cum_lo)
        self._normalize()

    def _normalize(self):
        while True:
            if (self.low ^ (self.low + self.range_)) & _M32 < _TOP:
                pass
            elif self.range_ < _BOT:
                # carry-less: truncate the interval at the next 2^16 boundary
                self.range_ = (-self.low) & (_BOT - 1)
            else:
                break
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _M32
            self.range_ = (self.range_ << 8) & _M32

    def finish(self):
        for _ in range(4):
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _M32
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range_ = _M32
        self.code = 0
        for _ in range(4):
            self.code = ((self.code << 8) | self._byte()) & _M32

    def _byte(self):
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        return 0

    def decode_value(self, total=CDF_TOTAL):
        self._r = self.range_ // total
        value = (self.code - self.low) & _M32
        value //= self._r
        return min(value, total - 1)

    def consume(self, cum_lo, cum_hi):
        self.low = (self.low + self._r * cum_lo) & _M32
        self.range_ = self._r * (cum_hi - cum_lo)
        while True:
            if (self.low ^ (self.low + self.range_)) & _M32 < _TOP:
                pass
            elif self.range_ < _BOT:
                self.range_ = (-self.low) & (_BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self._byte()) & _M32
            self.low = (self.low << 8) & _M32
            self.range_ = (self.range_ << 8) & _M32


def _tables_list(tables, count):
    if isinstance(tables, CdfTable):
        return [tables] * count
    tables = list(tables)
    if len(tables) == 1 and count != 1:
        return tables * count
    if len(tables) != count:
        raise RangeCoderError(f"{len(tables)} tables for {count} symbols")
    return tables


def rc_encode(symbols, tables):
    """Encode an integer sequence against per-symbol CdfTables.

    Symbols outside a table's range are escape-coded: the escape slot
    followed by the raw value under the shared uniform fallback table.
    """
    symbols = np.asarray(symbols)
    tables = _tables_list(tables, len(symbols))
    esc = escape_table()
    enc = RangeEncoder()
    for sym, table in zip(symbols, tables):
        sym = int(sym)
        slot = table.slot_of(sym)
        enc.encode(*table.bounds(slot))
        if table.has_escape and slot == table.escape_slot:
            if not (-esc.max_sym <= sym <= esc.max_sym):
                raise RangeCoderError(f"symbol {sym} exceeds the escape range")
            enc.encode(*esc.bounds(esc.slot_of(sym)))
    return enc.finish()


def rc_decode(data, tables, count):
    """Exact inverse of rc_encode given identical tables and count."""
    tables = _tables_list(tables, count)
    esc = escape_table()
    dec = RangeDecoder(data)
    out = np.empty(count, dtype=np.int64)
    for i, table in enumerate(tables):
        slot = table.find(dec.decode_value())
        dec.consume(*table.bounds(slot))
        if table.has_escape and slot == table.escape_slot:
            raw = esc.find(dec.decode_value())
            dec.consume(*esc.bounds(raw))
            out[i] = raw + esc.min_sym
        else:
            out[i] = slot + table.min_sym
    return out


# ---------------------------------------------------------------------------
# bitstream container

MAGIC = b"DSCC"
VERSION = 1
HEADER_LEN = 33  # 4 magic + 1 version + 12 dims + 8 lengths + 8 CRCs
_HEADER_FMT = "<3H3HIIII"


def pack_container(z_bytes, y_bytes, y_dims, z_dims):
    """Header + z stream + y stream; see module docstring for layout."""
    y_dims = tuple(int(d) for d in y_dims)
    z_dims = tuple(int(d) for d in z_dims)
    if len(y_dims) != 3 or len(z_dims) != 3:
        raise RangeCoderError("dims must be (H, W, C) triples")
    if any(d <= 0 or d > 0xFFFF for d in y_dims + z_dims):
        raise RangeCoderError("dims must be nonzero 16-bit values")
    if len(z_bytes) >= 1 << 32 or len(y_bytes) >= 1 << 32:
        raise RangeCoderError("stream too long for 32-bit length field")
    header = MAGIC + bytes([VERSION]) + struct.pack(
        _HEADER_FMT, *y_dims, *z_dims, len(z_bytes), len(y_bytes),
        zlib.crc32(z_bytes), zlib.crc32(y_bytes))
    return header + bytes(z_bytes) + bytes(y_bytes)


def unpack_container(blob):
    """-> (z_bytes, y_bytes, y_dims, z_dims); CRC is the integrity gate."""
    if len(blob) < 5 or blob[:4] != MAGIC:
        raise FormatError("not a DSCC container")
    if blob[4] != VERSION:
        raise FormatError(f"unsupported container version {blob[4]}")
    if len(blob) < HEADER_LEN:
        raise FrameCorrupt("truncated container header")
    fields = struct.unpack_from(_HEADER_FMT, blob, 5)
    y_dims, z_dims = fields[0:3], fields[3:6]
    z_len, y_len, crc_z, crc_y = fields[6:]
    if any(d == 0 for d in y_dims + z_dims):
        raise FrameCorrupt("zero dimension in container header")
    end = HEADER_LEN + z_len + y_len
    if len(blob) < end:
        raise FrameCorrupt("truncated container payload")
    z_bytes = blob[HEADER_LEN:HEADER_LEN + z_len]
    y_bytes = blob[HEADER_LEN + z_len:end]
    if zlib.crc32(z_bytes) != crc_z or zlib.crc32(y_bytes) != crc_y:
        raise FrameCorrupt("stream CRC mismatch")
    return z_bytes, y_bytes, y_dims, z_dims
