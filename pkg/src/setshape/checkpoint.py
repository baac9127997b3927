"""Versioned binary container for named float32 tensors.

Layout, little-endian:

    magic       4 bytes  b"SSC1"
    version     u32      (currently 1)
    meta_len    u32
    meta        meta_len bytes of UTF-8 JSON (config, kind, anything)
    n_tensors   u32
    directory   per tensor: name_len u16, name bytes, ndim u8, dims u32*ndim,
                offset u64 (absolute)
    data        float32 tensor payloads, back to back
    checksum    u32 CRC32 of everything between the magic and itself

Model checkpoints, denoiser checkpoints and emitted latent sets all use this
container; the JSON meta carries a "kind" field and whatever config is
needed to rebuild the owning module.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"SSC1"
VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """tensors: name -> array-like; stored as little-endian float32."""
    arrays = {}
    for name, t in tensors.items():
        a = np.asarray(t.detach().cpu().numpy() if hasattr(t, "detach") else t)
        arrays[name] = np.asarray(a, dtype="<f4", order="C")  # keeps 0-d shape

    meta_blob = json.dumps(meta or {}).encode()
    directory = b""
    offset_entries = []
    for name, a in arrays.items():
        nb = name.encode()
        entry = struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim)
        entry += struct.pack(f"<{a.ndim}I", *a.shape)
        directory += entry
        offset_entries.append((entry, a))

    # directory size is known once entries exist; offsets are absolute
    dir_size = sum(len(e) + 8 for e, _ in offset_entries)
    data_start = 4 + 4 + 4 + len(meta_blob) + 4 + dir_size
    body = struct.pack("<I", VERSION)
    body += struct.pack("<I", len(meta_blob)) + meta_blob
    body += struct.pack("<I", len(arrays))
    pos = data_start
    for entry, a in offset_entries:
        body += entry + struct.pack("<Q", pos)
        pos += a.nbytes
    for _, a in offset_entries:
        body += a.tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path):
    """Returns (tensors: dict[str, np.ndarray float32], meta: dict)."""
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    body = buf[4:-4]
    if zlib.crc32(body) != struct.unpack("<I", buf[-4:])[0]:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    pos = 4
    version = struct.unpack_from("<I", buf, pos)[0]
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    meta_len = struct.unpack_from("<I", buf, pos)[0]
    pos += 4
    meta = json.loads(buf[pos : pos + meta_len].decode())
    pos += meta_len
    n = struct.unpack_from("<I", buf, pos)[0]
    pos += 4
    tensors = {}
    for _ in range(n):
        name_len = struct.unpack_from("<H", buf, pos)[0]
        pos += 2
        name = buf[pos : pos + name_len].decode()
        pos += name_len
        ndim = struct.unpack_from("<B", buf, pos)[0]
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        offset = struct.unpack_from("<Q", buf, pos)[0]
        pos += 8
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(dims).copy()
    return tensors, meta


def save_module(path, module, meta: dict) -> None:
    """Persist an nn.Module state dict in the container."""
    save_checkpoint(path, dict(module.state_dict()), meta=meta)


def load_state_into(module, tensors: dict) -> None:
    import torch

    state = {k: torch.as_tensor(v) for k, v in tensors.items()}
    target_dtype = next(module.parameters()).dtype
    state = {k: v.to(target_dtype) for k, v in state.items()}
    module.load_state_dict(state)
