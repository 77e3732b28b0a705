"""Versioned binary container of named float32 arrays plus JSON metadata.

Layout (little-endian):
    b"MACK"  magic
    u32      format version
    u32      metadata length, then UTF-8 JSON (sorted keys)
    u32      array count
    per array: u16 name length, name, u8 ndim, u32 * ndim shape, float32 row-major data

The encoding has no timestamps, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MACK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(arrays: dict[str, np.ndarray], metadata: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [struct.pack("<I", len(meta)), meta, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 8
    (mlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    metadata = json.loads(blob[off:off + mlen].decode("utf-8"))
    off += mlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + klen].decode("utf-8")
        off += klen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    return arrays, metadata


def save(path, arrays: dict[str, np.ndarray], metadata: dict) -> None:
    Path(path).write_bytes(encode(arrays, metadata))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
