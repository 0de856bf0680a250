"""VTEN binary tensor files.

Layout: magic "VTEN", u8 version=1, u8 dtype (1 = float32 LE, 2 = u8),
u8 ndim, u8 zero pad, ndim x u32 LE extents, then the row-major payload
(last axis fastest).
"""

from __future__ import annotations

import io
import struct

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor

MAGIC = b"VTEN"
DTYPE_F32 = 1
DTYPE_U8 = 2

_CODES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}


def write_vten_bytes(array) -> bytes:
    arr = array.data if isinstance(array, Tensor) else np.asarray(array)
    if arr.dtype == np.uint8:
        code = DTYPE_U8
    else:
        code = DTYPE_F32
        arr = arr.astype("<f4", copy=False)
    if arr.ndim > 255:
        raise ShapeError("VTEN supports at most 255 dims")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BBBB", 1, code, arr.ndim, 0))
    for extent in arr.shape:
        buf.write(struct.pack("<I", extent))
    buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def read_vten_bytes(data: bytes) -> np.ndarray:
    if data[:4] != MAGIC:
        raise ShapeError("not a VTEN file (bad magic)")
    version, code, ndim, _pad = struct.unpack("<BBBB", data[4:8])
    if version != 1:
        raise ShapeError(f"unsupported VTEN version {version}")
    if code not in _CODES:
        raise ShapeError(f"unsupported VTEN dtype code {code}")
    shape = struct.unpack(f"<{ndim}I", data[8:8 + 4 * ndim])
    payload = np.frombuffer(data[8 + 4 * ndim:], dtype=_CODES[code])
    expected = int(np.prod(shape)) if shape else 1
    if payload.size != expected:
        raise ShapeError(f"VTEN payload has {payload.size} items, header says {expected}")
    arr = payload.reshape(shape)
    return arr.astype(np.float32) if code == DTYPE_F32 else arr.copy()


def save_vten(path, array):
    with open(path, "wb") as fh:
        fh.write(write_vten_bytes(array))


def load_vten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_vten_bytes(fh.read())
