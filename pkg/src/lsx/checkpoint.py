"""Single-file tensor container.

Layout, all little-endian:

    magic   4 bytes  b"LSXC"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u32, name utf-8
        rank     u32, extents u64 * rank
        ptag     u8   (4 = float32, 8 = float64)
        payload  raw values, C order

Writes go through a temp file and an atomic rename so a crashed run never
leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"LSXC"
VERSION = 1

_PTAG = {np.dtype(np.float32): 4, np.dtype(np.float64): 8}
_DTYPE = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_tensors(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _PTAG:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(struct.pack("<B", _PTAG[arr.dtype]))
        chunks.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_tensors(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        (ptag,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        if ptag not in _DTYPE:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown precision tag {ptag}")
        dt = _DTYPE[ptag]
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = n * dt.itemsize
        arr = np.frombuffer(blob[pos : pos + nbytes], dtype=dt).reshape(shape)
        pos += nbytes
        out[name] = arr.astype(dt.newbyteorder("="))
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
