"""Minimal PFT tensor I/O, implemented independently from the consumer side.

Format: ``PFT1`` magic, u8 dtype code (0=float32, 1=uint16, 2=uint8), u8 ndim
(2 or 3), ndim little-endian u32 dims (h, w[, c]), then the raw row-major
payload. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"PFT1"
_CODE_TO_DTYPE = {0: "<f4", 1: "<u2", 2: "<u1"}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.uint16): 1, np.dtype(np.uint8): 2}


class PFTError(Exception):
    pass


def read_pft(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise PFTError(f"{path}: bad magic {blob[:4]!r}")
    code, ndim = blob[4], blob[5]
    if code not in _CODE_TO_DTYPE:
        raise PFTError(f"{path}: unknown dtype code {code}")
    if ndim not in (2, 3):
        raise PFTError(f"{path}: bad ndim {ndim}")
    dims = struct.unpack(f"<{ndim}I", blob[6 : 6 + 4 * ndim])
    dtype = np.dtype(_CODE_TO_DTYPE[code])
    count = int(np.prod(dims))
    payload = blob[6 + 4 * ndim :]
    if len(payload) < count * dtype.itemsize:
        raise PFTError(f"{path}: truncated payload")
    arr = np.frombuffer(payload[: count * dtype.itemsize], dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_pft(arr: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_TO_CODE:
        raise PFTError(f"cannot encode dtype {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3):
        raise PFTError(f"cannot encode ndim {arr.ndim}")
    if min(arr.shape) < 1:
        raise PFTError(f"zero-sized dimension in {arr.shape}")
    header = MAGIC + struct.pack("<BB", _DTYPE_TO_CODE[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype(arr.dtype.newbyteorder("<")).tobytes()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
