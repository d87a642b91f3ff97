"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   b"PBLD"
    u32     format version (1)
    u32     record count
    records: [u32 name length][name utf-8][u8 dtype code (0 = f64)]
             [u32 rank][u32 dim x rank][row-major f64 payload]
    u64     metadata length
    bytes   metadata, canonical JSON utf-8

Records are written in sorted name order and metadata is serialized
canonically, so load followed by save reproduces identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"PBLD"
VERSION = 1
DTYPE_F64 = 0


class CheckpointError(ValueError):
    """Corrupt or unsupported checkpoint content."""


def _canonical_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def checkpoint_bytes(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb))
        blob += nb
        blob += struct.pack("<B", DTYPE_F64)
        blob += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    mb = _canonical_meta(meta)
    blob += struct.pack("<Q", len(mb))
    blob += mb
    return bytes(blob)


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(tensors, meta))


def parse_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic bytes {blob[:4]!r}")
    off = 4
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (dtype_code,) = struct.unpack_from("<B", blob, off)
        off += 1
        if dtype_code != DTYPE_F64:
            raise CheckpointError(f"record {name!r}: unknown dtype code {dtype_code}")
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(dims)
        off += 8 * size
        tensors[name] = arr.astype(np.float64)
    (meta_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    meta = json.loads(blob[off:off + meta_len].decode("utf-8"))
    return tensors, meta


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
