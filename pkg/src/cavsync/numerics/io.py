"""CAVT tensor files: ``CAVT`` magic, u32 rank, u32 extents, float32 payload (all LE)."""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"CAVT"


class FormatError(ValueError):
    pass


def save_cavt(path: str | os.PathLike, array) -> None:
    arr = np.array(array, dtype="<f4", order="C")  # keeps rank 0, unlike ascontiguousarray
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def load_cavt(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (rank,) = struct.unpack_from("<I", blob, 4)
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(blob) - offset != 4 * count:
        raise FormatError(f"{path}: payload holds {(len(blob) - offset) // 4} values, header says {count}")
    return np.frombuffer(blob, dtype="<f4", offset=offset, count=count).reshape(shape).astype(np.float32)


def read_cavt_shape(path: str | os.PathLike) -> tuple[int, ...]:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head[:4] != MAGIC:
            raise FormatError(f"{path}: bad magic {head[:4]!r}")
        (rank,) = struct.unpack("<I", head[4:8])
        return struct.unpack(f"<{rank}I", fh.read(4 * rank))
