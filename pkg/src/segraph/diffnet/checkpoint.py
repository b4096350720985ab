"""Binary parameter checkpoints.

Layout (little-endian)::

    b"SGRF" | version:u32 | count:u32 |
    count x ( name_len:u32 | name:utf-8 | rank:u32 | dims:u64*rank | data:f64*prod(dims) )
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SGRF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(state: dict) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, array in state.items():
        array = np.asarray(array, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(blob) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    state = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            if pos + 8 * size > len(blob):
                raise CheckpointError(f"truncated data for {name!r}")
            state[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last entry")
    return state


def save(path, state: dict):
    with open(path, "wb") as fh:
        fh.write(dumps(state))


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())
