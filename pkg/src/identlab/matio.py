"""Matrix persistence: the MIDL binary format and plain CSV.

MIDL layout (little-endian): magic ``b"MIDL"``, ``u32`` version (1),
``u64`` rows, ``u64`` cols, then ``rows * cols`` float64 values, row-major.
The format is picked from the file extension: ``.csv`` is CSV, anything
else is MIDL.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError

MAGIC = b"MIDL"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class MatrixFormatError(ShapeError):
    pass


def to_midl_bytes(m) -> bytes:
    a = np.ascontiguousarray(np.asarray(m, dtype="<f8"))
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return _HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1]) + a.tobytes(order="C")


def from_midl_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise MatrixFormatError("truncated MIDL header")
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MatrixFormatError(f"unsupported MIDL version {version}")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise MatrixFormatError(f"MIDL payload is {len(buf)} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.astype(np.float64).reshape(rows, cols)


def _is_csv(path: Path) -> bool:
    return path.suffix.lower() == ".csv"


def save_matrix(path, m, header: list[str] | None = None) -> Path:
    path = Path(path)
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if _is_csv(path):
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            if header is not None:
                if len(header) != a.shape[1]:
                    raise ShapeError("header length does not match column count")
                w.writerow(header)
            for row in a:
                w.writerow([repr(float(v)) for v in row])
    else:
        path.write_bytes(to_midl_bytes(a))
    return path


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    if not _is_csv(path):
        return from_midl_bytes(path.read_bytes())
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise MatrixFormatError(f"{path}: row {i} has {len(r)} fields, expected {width}")
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
