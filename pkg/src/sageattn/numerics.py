"""Software emulation of the low-precision formats and matmuls used by the kernels.

Everything here rounds to nearest, ties to even. Emulated matmuls accumulate in
strictly ascending ``k`` order so results are reproducible bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

FP16_MAX = 65504.0
FP16_MIN_NORMAL = 2.0**-14

# i32 accumulator guard: 127 * 127 * 2**16 < 2**31
INT8_MATMUL_MAX_K = 1 << 16


class NumericOverflowError(ArithmeticError):
    """An emulated low-precision accumulator overflowed to infinity."""


@dataclass(frozen=True)
class Fp8Format:
    name: str
    exp_bits: int
    man_bits: int
    bias: int
    max_finite: float

    @property
    def min_normal_exp(self) -> int:
        return 1 - self.bias


# OCP FP8: E4M3 has no infinities (S.1111.111 is NaN), E5M2 is IEEE-like.
E4M3 = Fp8Format("e4m3", 4, 3, 7, 448.0)
E5M2 = Fp8Format("e5m2", 5, 2, 15, 57344.0)
FP8_FORMATS = {"e4m3": E4M3, "e5m2": E5M2}


def fp8_format(fmt) -> Fp8Format:
    if isinstance(fmt, Fp8Format):
        return fmt
    try:
        return FP8_FORMATS[str(fmt).lower()]
    except KeyError:
        raise ValueError(f"unknown fp8 format {fmt!r}") from None


# ---------------------------------------------------------------- binary16


def round_to_fp16(x):
    """Round to the nearest binary16 value (ties to even), returned as float64.

    Magnitudes past the overflow threshold become infinity, as IEEE requires.
    Works on scalars and arrays.
    """
    a = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = a.astype(np.float16).astype(np.float64)
    if out.ndim == 0:
        return float(out)
    return out


_LOW_MASK = np.int64((1 << 42) - 1)
_HALF_MINUS_ONE = np.int64((1 << 41) - 1)


@numba.njit(cache=True)
def _round_row_fp16(row, bits):
    # float64 -> nearest binary16, in place; ``bits`` aliases ``row`` as int64
    for j in range(row.shape[0]):
        a = abs(row[j])
        if a >= FP16_MIN_NORMAL:
            b = bits[j]
            bits[j] = (b + _HALF_MINUS_ONE + ((b >> 42) & 1)) & ~_LOW_MASK
            if abs(row[j]) > FP16_MAX:
                row[j] = math.copysign(math.inf, row[j])
        elif a != 0.0:
            # subnormal binary16: a multiple of 2**-24; the scaling is exact
            y = row[j] * 16777216.0
            f = math.floor(y)
            r = y - f
            if r > 0.5 or (r == 0.5 and f % 2.0 == 1.0):
                f += 1.0
            row[j] = f / 16777216.0


@numba.njit(cache=True)
def _fp16acc_kernel(a, b, acc):
    # a: (G, m, k), b: (G, k, n), acc: (G, m, n) float64 holding binary16 values
    G, m, k = a.shape
    n = b.shape[2]
    row = np.empty(n)
    bits = row.view(np.int64)
    overflow = False
    for g in range(G):
        for i in range(m):
            for j in range(n):
                row[j] = acc[g, i, j]
            for t in range(k):
                p = a[g, i, t]
                if p == 0.0:
                    continue
                for j in range(n):
                    # binary16 * binary16 is exact in float64; one rounding per add
                    row[j] = row[j] + p * b[g, t, j]
                _round_row_fp16(row, bits)
            for j in range(n):
                v = row[j]
                if v == math.inf or v == -math.inf or v != v:
                    overflow = True
                acc[g, i, j] = v
    return overflow


def fp16_matmul_fp16acc(a, b, acc=None, *, validate=True):
    """Matmul of binary16 matrices through a binary16 accumulator.

    Each product is formed exactly and added to the accumulator with one
    round-to-nearest-even per addition, ``k`` ascending. ``acc`` seeds the
    accumulator (flash-style accumulation); it must already hold binary16
    values. Leading batch dimensions broadcast like ``np.matmul``.

    Returns a float64 array whose entries are all binary16 values.
    ``validate=False`` skips the operand checks; kernels that rounded their
    operands themselves use it in the inner loop.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    for name, t in (("a", a), ("b", b)) if validate else ():
        if not np.all(np.isfinite(t)):
            raise ValueError(f"{name} has non-finite entries")
        if not np.array_equal(round_to_fp16(t), t):
            raise ValueError(f"{name} has entries that are not binary16 values")

    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    m, n = a.shape[-2], b.shape[-1]
    out_shape = batch + (m, n)
    if acc is None:
        acc = np.zeros(out_shape)
    else:
        acc = np.array(np.broadcast_to(np.asarray(acc, dtype=np.float64), out_shape))
        if validate and not np.array_equal(round_to_fp16(acc), acc):
            raise ValueError("acc has entries that are not binary16 values")

    a3 = np.ascontiguousarray(np.broadcast_to(a, batch + a.shape[-2:])).reshape(-1, m, a.shape[-1])
    b3 = np.ascontiguousarray(np.broadcast_to(b, batch + b.shape[-2:])).reshape(-1, b.shape[-2], n)
    acc3 = np.ascontiguousarray(acc).reshape(-1, m, n)
    if _fp16acc_kernel(a3, b3, acc3):
        raise NumericOverflowError("binary16 accumulator overflowed")
    return acc3.reshape(out_shape)


# ---------------------------------------------------------------- fp8


def fp8_value_table(fmt) -> np.ndarray:
    """Decoded values of all 256 codes; NaN codes decode to NaN, E5M2 infinities to +-inf."""
    f = fp8_format(fmt)
    codes = np.arange(256)
    sign = np.where(codes & 0x80, -1.0, 1.0)
    e = (codes >> f.man_bits) & ((1 << f.exp_bits) - 1)
    m = codes & ((1 << f.man_bits) - 1)
    frac = m / float(1 << f.man_bits)
    mag = np.where(e == 0,
                   np.ldexp(frac, f.min_normal_exp),
                   np.ldexp(1.0 + frac, e - f.bias))
    top = (1 << f.exp_bits) - 1
    if f is E4M3:
        return np.where((e == top) & (m == (1 << f.man_bits) - 1), np.nan, sign * mag)
    # E5M2 keeps IEEE-style specials
    special = np.where(m == 0, sign * np.inf, np.nan)
    return np.where(e == top, special, sign * mag)


def decode_fp8(code, fmt):
    table = fp8_value_table(fmt)
    out = table[np.asarray(code, dtype=np.int64) & 0xFF]
    return float(out) if np.ndim(out) == 0 else out


def round_fp8(x, fmt):
    """Nearest value representable in ``fmt`` (ties to even), saturating at max finite."""
    f = fp8_format(fmt)
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("fp8 rounding needs finite input")
    mag = np.abs(a)
    _, e = np.frexp(mag)
    exp = np.maximum(e - 1, f.min_normal_exp)
    step = np.ldexp(1.0, exp - f.man_bits)
    r = np.rint(mag / step) * step
    r = np.minimum(r, f.max_finite)
    out = np.copysign(r, a)
    return float(out) if out.ndim == 0 else out


def encode_fp8(x, fmt):
    """Encode to the 8-bit pattern of the nearest representable value (saturating)."""
    f = fp8_format(fmt)
    v = np.asarray(round_fp8(x, f), dtype=np.float64)
    mag = np.abs(v)
    _, e = np.frexp(mag)
    exp = np.maximum(e - 1, f.min_normal_exp)
    normal = mag >= 2.0**f.min_normal_exp
    biased = np.where(normal, exp + f.bias, 0)
    man = np.where(normal,
                   np.ldexp(mag, -exp) - 1.0,
                   np.ldexp(mag, -f.min_normal_exp))
    man = np.rint(man * (1 << f.man_bits)).astype(np.int64)
    code = (biased.astype(np.int64) << f.man_bits) | man
    code = code | np.where(np.signbit(v), 0x80, 0)
    code = code.astype(np.uint8)
    return int(code) if code.ndim == 0 else code


# ---------------------------------------------------------------- integer / reference matmuls


def int8_matmul_i32acc(a, b):
    """Exact integer matmul of int8 operands with an int32 accumulator.

    Operands are carried through float64 BLAS: every partial sum is an integer
    below 2**31 and therefore exact in binary64, whatever the summation order.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    k = a.shape[-1]
    if k > INT8_MATMUL_MAX_K:
        raise ValueError(f"k={k} exceeds the int32 accumulator guard {INT8_MATMUL_MAX_K}")
    for t in (a, b):
        if t.size and (t.min() < -127 or t.max() > 127):
            raise ValueError("int8 operands must lie in [-127, 127]")
    out = np.matmul(a.astype(np.float64), b.astype(np.float64))
    return out.astype(np.int32)


def matmul_fp32acc(a, b):
    """Reference matmul with at-least-binary32 accumulation, result in binary32."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return np.matmul(a.astype(np.float64), b.astype(np.float64)).astype(np.float32)
