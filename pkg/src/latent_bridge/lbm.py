"""Reader/writer for LBM1 binary matrices.

Layout: ``b"LBM1"``, u32 rows, u32 cols (little-endian), then rows*cols
little-endian float64 values in row-major order.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"LBM1"
_HEADER = struct.Struct("<4sII")


class FormatError(ValueError):
    pass


def dumps(matrix) -> bytes:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise FormatError(f"LBM1 stores 2-D matrices, got shape {m.shape}")
    rows, cols = m.shape
    return _HEADER.pack(MAGIC, rows, cols) + np.ascontiguousarray(m, dtype="<f8").tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header ({len(buf)} bytes)")
    magic, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise FormatError(f"{rows}x{cols} matrix needs {expected} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.astype(np.float64).reshape(rows, cols)


def save(path: str | os.PathLike, matrix) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(matrix))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return loads(buf)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
