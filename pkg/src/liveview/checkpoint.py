"""Flat binary checkpoint container.

Layout: header (magic ``LVW1``, version, number of views V, head-mode
flag), then one record per named array: name length, utf-8 name, shape
rank, dims, little-endian float32 payload. Round-trips bit-exactly.

Extra model metadata (architecture kind, centering mode, trained plane
count and disparity bounds) rides along as reserved ``meta/``-prefixed
records so the container format stays uniform.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LVW1"
VERSION = 1

HEAD_SOFTMAX_V = 0
HEAD_COMPACT_VMINUS1 = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], num_views: int, head_flag: int):
    """Write named float arrays to `path` in the LVW1 container format."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, num_views, head_flag))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b"")
            f.write(a.tobytes())


def load_checkpoint(path):
    """Read an LVW1 file -> (arrays dict, num_views, head_flag)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not an LVW1 checkpoint")
    version, num_views, head_flag = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 16
    arrays: dict[str, np.ndarray] = {}
    try:
        while off < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
            off += 4 * rank
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            arrays[name] = arr.copy()
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
    return arrays, num_views, head_flag
