"""Binary matrix files ("RPGM").

Layout: magic ``b"RPGM"``, version ``u32``, rows ``u32``, cols ``u32``, then
``rows * cols`` little-endian float32 values in row-major order.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import LoadError, VersionError

MATRIX_MAGIC = b"RPGM"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def save_matrix(path: str | os.PathLike, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    data = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, *data.shape))
        fh.write(data.tobytes())


def load_matrix(path: str | os.PathLike) -> np.ndarray:
    """Read an RPGM file into a C-contiguous float32 array."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise LoadError(f"cannot read matrix file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise LoadError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise LoadError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    if version != MATRIX_VERSION:
        raise VersionError(f"{path}: unsupported matrix version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise LoadError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float32)
