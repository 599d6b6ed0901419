"""Flat binary parameter checkpoints.

Layout (little-endian)::

    b"PRSS"  u32 version
    u32 record count
    per record: u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
                prod(dims) x f64 payload
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PRSS"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict) -> None:
    """Write ``{name: array}`` in insertion order."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        arr = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a PRSS checkpoint")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        count_f = int(np.prod(dims)) if rank else 1
        nbytes = 8 * count_f
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=count_f, offset=pos).reshape(dims).astype(np.float64)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
