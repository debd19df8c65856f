"""EMB1 embedding files: the interchange format the evaluation toolkit reads.

Layout: magic ``EMB1``, little-endian u32 dtype code (0 = float32), u64
rows, u64 cols, row-major float32 payload. Implemented here independently;
interop is proven by the tests reading outputs back through the consumer.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InputError

HEADER = struct.Struct("<4sIQQ")
MAGIC = b"EMB1"
DTYPE_F32 = 0


class Emb1Writer:
    """Streams float32 rows to an EMB1 file; rows land in append order."""

    def __init__(self, path: str | Path, dims: int):
        self.path = Path(path)
        self.dims = dims
        self.rows = 0
        self._fh = self.path.open("wb")
        self._fh.write(HEADER.pack(MAGIC, DTYPE_F32, 0, dims))

    def append(self, block: np.ndarray) -> None:
        block = np.ascontiguousarray(block, dtype="<f4")
        if block.ndim == 1:
            block = block[None, :]
        if block.shape[1] != self.dims:
            raise InputError(f"block has {block.shape[1]} dims, writer expects {self.dims}")
        self._fh.write(block.tobytes())
        self.rows += block.shape[0]

    def close(self) -> None:
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, DTYPE_F32, self.rows, self.dims))
        self._fh.close()

    def __enter__(self) -> "Emb1Writer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_rows(path: str | Path) -> np.memmap:
    """Memory-map an EMB1 file's payload as (rows, dims) float32."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = fh.read(HEADER.size)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    if len(raw) < HEADER.size:
        raise InputError(f"{path}: shorter than the EMB1 header")
    magic, dtype_code, rows, cols = HEADER.unpack(raw)
    if magic != MAGIC or dtype_code != DTYPE_F32:
        raise InputError(f"{path}: not a float32 EMB1 file")
    if rows < 1 or cols < 1:
        raise InputError(f"{path}: empty matrix {rows}x{cols}")
    return np.memmap(path, dtype="<f4", mode="r", offset=HEADER.size, shape=(rows, cols))
