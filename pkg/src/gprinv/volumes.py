"""Binary volume file format ("GPRV").

Layout, all little-endian::

    magic   4 bytes  b"GPRV"
    version u16      1
    dtype   u8       0 = float32, 1 = float64
    ndim    u8
    dims    ndim x u32
    payload row-major values, slowest axis first
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import BadMagicError, BadVersionError, DimOverflowError, TruncatedFileError

MAGIC = b"GPRV"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_MAX_ELEMENTS = 2 ** 40


def encode_volume(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float32)
    code = _CODES[arr.dtype]
    if any(d >= 2 ** 32 for d in arr.shape):
        raise DimOverflowError(f"dimension exceeds u32: {arr.shape}")
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_volume(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise TruncatedFileError(f"file too short for a header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise BadVersionError(f"unsupported volume version {version}")
    if code not in _DTYPES:
        raise BadVersionError(f"unknown dtype code {code}")
    end = 8 + 4 * ndim
    if len(buf) < end:
        raise TruncatedFileError("file truncated inside the dimension table")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    count = 1
    for d in dims:
        count *= d
        if count > _MAX_ELEMENTS:
            raise DimOverflowError(f"declared dims {dims} exceed the supported element count")
    dtype = _DTYPES[code]
    need = count * dtype.itemsize
    if len(buf) - end < need:
        raise TruncatedFileError(f"payload has {len(buf) - end} bytes, dims {dims} need {need}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=end).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_volume(path, array):
    atomic_write(path, encode_volume(array))


def read_volume(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_volume(fh.read())


def atomic_write(path, data: bytes):
    """Write to a temporary sibling then rename, so readers never see a
    partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
