"""NPY v1.0 reading and writing for (batch, heads, tokens, dim) tensors."""
from __future__ import annotations

import os

import numpy as np
from numpy.lib import format as npy_format

SUPPORTED_DTYPES = (np.dtype("<f4"), np.dtype("<f2"))


class TensorFileError(ValueError):
    pass


class MalformedHeaderError(TensorFileError):
    pass


class UnsupportedDtypeError(TensorFileError):
    pass


class UnsupportedLayoutError(TensorFileError):
    pass


class ShapeError(TensorFileError):
    pass


class TruncatedPayloadError(TensorFileError):
    pass


def load_tensor(path) -> np.ndarray:
    """Read a 4-D C-order float32/float16 NPY v1.0 file; float16 is upcast to float32."""
    with open(path, "rb") as f:
        try:
            version = npy_format.read_magic(f)
        except ValueError as e:
            raise MalformedHeaderError(f"{path}: {e}") from None
        if version != (1, 0):
            raise MalformedHeaderError(f"{path}: NPY version {version}, expected 1.0")
        try:
            shape, fortran, dtype = npy_format.read_array_header_1_0(f)
        except ValueError as e:
            raise MalformedHeaderError(f"{path}: {e}") from None
        if dtype not in SUPPORTED_DTYPES:
            raise UnsupportedDtypeError(f"{path}: dtype {dtype.str} (want <f4 or <f2)")
        if fortran:
            raise UnsupportedLayoutError(f"{path}: Fortran-order arrays are not supported")
        if len(shape) != 4:
            raise ShapeError(f"{path}: expected a 4-D (B, H, N, d) tensor, got shape {shape}")
        count = int(np.prod(shape))
        payload = f.read()
    if len(payload) != count * dtype.itemsize:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(payload)} bytes, header needs {count * dtype.itemsize}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(np.float32)


def save_tensor(t, path, dtype="<f4") -> None:
    arr = np.ascontiguousarray(t, dtype=np.dtype(dtype))
    if arr.dtype not in SUPPORTED_DTYPES:
        raise UnsupportedDtypeError(f"dtype {arr.dtype.str} (want <f4 or <f2)")
    if arr.ndim != 4:
        raise ShapeError(f"expected a 4-D (B, H, N, d) tensor, got shape {arr.shape}")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        npy_format.write_array_header_1_0(f, npy_format.header_data_from_array_1_0(arr))
        f.write(arr.tobytes(order="C"))
    os.replace(tmp, path)
