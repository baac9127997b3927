"""Binary dataset shards holding sampled shapes ("LGM1" format).

Layout, all little-endian:

    magic           4 bytes  b"LGM1"
    shape_count     u32
    offsets         u64 * shape_count   absolute offset of each shape block
    blocks          shape blocks, back to back
    checksum        u32  CRC32 of everything between the magic and itself

Each shape block:

    n_surface, n_vol, n_near   u32 * 3
    surface coords             f32 * 3 * n_surface
    vol coords                 f32 * 3 * n_vol
    vol labels                 bit-packed, ceil(n_vol / 8) bytes
    near coords                f32 * 3 * n_near
    near labels                bit-packed, ceil(n_near / 8) bytes

Coordinates are stored as raw float32, so a write/read round trip is
bit-exact.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ShardChecksumError, ShardMagicError, ShardTruncatedError
from .queries import SampledShape

MAGIC = b"LGM1"


def _pack_block(shape: SampledShape) -> bytes:
    parts = [
        struct.pack(
            "<III",
            len(shape.surface_points),
            len(shape.vol_queries),
            len(shape.near_queries),
        ),
        shape.surface_points.astype("<f4").tobytes(),
        shape.vol_queries.astype("<f4").tobytes(),
        np.packbits(shape.vol_labels).tobytes(),
        shape.near_queries.astype("<f4").tobytes(),
        np.packbits(shape.near_labels).tobytes(),
    ]
    return b"".join(parts)


def write_shard(shapes, path) -> None:
    if not shapes:
        raise ValueError("refusing to write an empty shard")
    blocks = [_pack_block(s) for s in shapes]
    header_len = 4 + 4 + 8 * len(blocks)
    offsets = []
    pos = header_len
    for b in blocks:
        offsets.append(pos)
        pos += len(b)
    body = struct.pack("<I", len(blocks))
    body += struct.pack(f"<{len(blocks)}Q", *offsets)
    body += b"".join(blocks)
    checksum = zlib.crc32(body)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", checksum))


def _take(buf, pos, n, path):
    if pos + n > len(buf):
        raise ShardTruncatedError(f"{path}: truncated (need {pos + n} bytes, have {len(buf)})")
    return buf[pos : pos + n], pos + n


def _unpack_block(buf, pos, path):
    raw, pos = _take(buf, pos, 12, path)
    n_s, n_v, n_n = struct.unpack("<III", raw)

    def coords(n, pos):
        raw, pos = _take(buf, pos, 12 * n, path)
        return np.frombuffer(raw, dtype="<f4").reshape(n, 3).copy(), pos

    def labels(n, pos):
        raw, pos = _take(buf, pos, (n + 7) // 8, path)
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=n)
        return bits.astype(bool), pos

    surface, pos = coords(n_s, pos)
    vol, pos = coords(n_v, pos)
    vol_lab, pos = labels(n_v, pos)
    near, pos = coords(n_n, pos)
    near_lab, pos = labels(n_n, pos)
    shape = SampledShape(
        surface_points=surface,
        vol_queries=vol,
        vol_labels=vol_lab,
        near_queries=near,
        near_labels=near_lab,
    )
    return shape, pos


def read_shard(path):
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise ShardMagicError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < 12:
        raise ShardTruncatedError(f"{path}: too short for header")
    stored_checksum = struct.unpack("<I", buf[-4:])[0]
    body = buf[4:-4]
    if zlib.crc32(body) != stored_checksum:
        # distinguish truncation (content missing) from corruption
        _validate_lengths(buf, path)
        raise ShardChecksumError(f"{path}: checksum mismatch")
    shapes, _ = _parse_body(buf, path)
    return shapes


def _parse_body(buf, path):
    pos = 4
    raw, pos = _take(buf, pos, 4, path)
    count = struct.unpack("<I", raw)[0]
    raw, pos = _take(buf, pos, 8 * count, path)
    offsets = struct.unpack(f"<{count}Q", raw)
    shapes = []
    for off in offsets:
        shape, pos = _unpack_block(buf, off, path)
        shapes.append(shape)
    return shapes, pos


def _validate_lengths(buf, path):
    """Walk the declared layout so truncation raises ShardTruncatedError."""
    _, end = _parse_body(buf, path)
    _take(buf, end, 4, path)  # trailing checksum
