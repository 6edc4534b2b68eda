"""Flat binary parameter container plus a JSON sidecar manifest.

Layout: magic ``TPCK``, format version u32, tensor count u32, then per
tensor: name length u32 + UTF-8 bytes, rank u32, dims (u32 each), raw
little-endian float32 values. All integers little-endian.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"TPCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, Tensor | np.ndarray]) -> dict:
    """Write tensors (as float32) and the manifest; returns the manifest."""
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(tensors))
    entries = []
    for name, t in tensors.items():
        arr = np.ascontiguousarray(
            t.data if isinstance(t, Tensor) else t, dtype="<f4"
        )
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "count": int(arr.size)})
    path.write_bytes(bytes(blob))
    manifest = {
        "format": "TPCK",
        "version": VERSION,
        "tensors": entries,
        "sha256": hashlib.sha256(bytes(blob)).hexdigest(),
    }
    manifest_path = path.with_suffix(path.suffix + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(dims)
        offset += 4 * n
        out[name] = arr.copy()
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return out


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
