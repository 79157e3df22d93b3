"""Raw tensor serialization.

Layout: magic ``SGT1``, dtype byte (0 = float32, 1 = float64), ndim byte,
then each dim as little-endian u64, then the row-major little-endian payload.
Round trips are bit-exact.
"""

import struct

import numpy as np

MAGIC = b"SGT1"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class FormatError(ValueError):
    """Raised when bytes do not parse as a valid tensor record."""


def tensor_bytes(arr):
    """Serialize a float array to the raw record bytes."""
    arr = np.asarray(arr)
    if arr.dtype not in _CODE_FOR:
        raise FormatError(f"unsupported dtype {arr.dtype}, expected float32 or float64")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    head = MAGIC + struct.pack("<BB", _CODE_FOR[arr.dtype], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return head + dims + payload


def read_tensor(buf, offset=0):
    """Parse one tensor record from ``buf`` starting at ``offset``.

    Returns:
        (array, next_offset)
    """
    if buf[offset : offset + 4] != MAGIC:
        raise FormatError(f"bad magic at offset {offset}")
    offset += 4
    if len(buf) < offset + 2:
        raise FormatError("truncated header")
    code, ndim = struct.unpack_from("<BB", buf, offset)
    offset += 2
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    if len(buf) < offset + 8 * ndim:
        raise FormatError("truncated dims")
    shape = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    count = 1
    for d in shape:
        count *= d
    nbytes = count * dtype.itemsize
    if len(buf) < offset + nbytes:
        raise FormatError("truncated payload")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), offset + nbytes


def save_tensor(path, arr):
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(arr))


def load_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = read_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor record")
    return arr
