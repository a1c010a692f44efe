"""Dynamic quantizers, the K-smoothing transform and the static-scale P quantizer.

Matrices are ``(..., tokens, channels)``; any leading axes (batch, heads) are
independent matrices, each with its own scales.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import fp8_format, round_fp8

INT8_MAX = 127
DTYPES = ("int8", "e4m3", "e5m2")

STATIC_P_SCALE = np.float32(1.0 / INT8_MAX)
# exp() of a non-positive float32 can land a hair above 1 only through upstream bugs
_P_SLACK = 1e-6


@dataclass(frozen=True)
class Granularity:
    kind: str  # "tensor" | "token" | "channel" | "block"
    block_size: int | None = None

    def __post_init__(self):
        if self.kind not in ("tensor", "token", "channel", "block"):
            raise ValueError(f"unknown granularity {self.kind!r}")
        if self.kind == "block":
            if self.block_size is None or self.block_size < 1:
                raise ValueError("per-block granularity needs block_size >= 1")
        elif self.block_size is not None:
            raise ValueError(f"block_size only applies to per-block, not {self.kind!r}")

    def n_scales(self, n_tokens: int, n_channels: int) -> int:
        if self.kind == "tensor":
            return 1
        if self.kind == "token":
            return n_tokens
        if self.kind == "channel":
            return n_channels
        return math.ceil(n_tokens / self.block_size)

    def __str__(self):
        return f"block({self.block_size})" if self.kind == "block" else self.kind


PER_TENSOR = Granularity("tensor")
PER_TOKEN = Granularity("token")
PER_CHANNEL = Granularity("channel")


def per_block(block_size: int) -> Granularity:
    return Granularity("block", block_size)


@dataclass
class QuantizedMatrix:
    values: np.ndarray  # int8 for INT8, float32 holding fp8 values otherwise
    scales: np.ndarray  # float32, (..., n_scales)
    granularity: Granularity
    dtype: str

    def token_scales(self) -> np.ndarray:
        """Scale owning each token, shape (..., tokens). Not defined per-channel."""
        return _expand_tokens(self.scales, self.granularity, self.values.shape[-2])

    def broadcast_scales(self) -> np.ndarray:
        """Scales broadcastable against ``values``."""
        if self.granularity.kind == "channel":
            return self.scales[..., None, :]
        return self.token_scales()[..., None]


def _expand_tokens(scales, g: Granularity, n_tokens: int) -> np.ndarray:
    if g.kind == "tensor":
        return np.repeat(scales, n_tokens, axis=-1)
    if g.kind == "token":
        return scales
    if g.kind == "block":
        return np.repeat(scales, g.block_size, axis=-1)[..., :n_tokens]
    raise ValueError("per-channel scales do not map onto tokens")


def _group_absmax(a: np.ndarray, g: Granularity) -> np.ndarray:
    mag = np.abs(a)
    if g.kind == "tensor":
        return mag.max(axis=(-2, -1), initial=0.0)[..., None]
    if g.kind == "token":
        return mag.max(axis=-1, initial=0.0)
    if g.kind == "channel":
        return mag.max(axis=-2, initial=0.0)
    n = a.shape[-2]
    starts = np.arange(0, n, g.block_size)
    return np.maximum.reduceat(mag.max(axis=-1, initial=0.0), starts, axis=-1)


def _broadcast(scales, g: Granularity, n_tokens: int) -> np.ndarray:
    if g.kind == "channel":
        return scales[..., None, :]
    return _expand_tokens(scales, g, n_tokens)[..., None]


def quantize(a, granularity: Granularity = PER_TOKEN, dtype: str = "int8") -> QuantizedMatrix:
    """Symmetric dynamic quantization with one scale per group.

    INT8: ``scale = absmax / 127`` and ``values = clamp(rint(x / scale), -127, 127)``.
    FP8: ``scale = absmax / max_finite`` and values are ``x / scale`` rounded to
    the format. A group that is all zeros gets scale 1.
    """
    a = np.asarray(a, dtype=np.float32)
    if a.ndim < 2:
        raise ValueError("quantize expects (..., tokens, channels)")
    if not np.all(np.isfinite(a)):
        raise ValueError("cannot quantize non-finite values")
    dtype = dtype.lower()
    if dtype not in DTYPES:
        raise ValueError(f"unknown quantized dtype {dtype!r}")
    qmax = np.float32(INT8_MAX if dtype == "int8" else fp8_format(dtype).max_finite)

    amax = _group_absmax(a, granularity)
    zero = amax == 0
    scales = np.where(zero, np.float32(1.0), amax / qmax).astype(np.float32)
    # multiply by qmax/absmax instead of dividing by scale: the group max then
    # lands on exactly +-qmax, and rowmax == 1 reproduces the static 1/127 path.
    # float64 keeps qmax/absmax finite for subnormal groups.
    inv = qmax / np.where(zero, 1.0, amax.astype(np.float64))
    x = a.astype(np.float64) * _broadcast(inv, granularity, a.shape[-2])
    if dtype == "int8":
        values = np.clip(np.rint(x), -INT8_MAX, INT8_MAX).astype(np.int8)
    else:
        values = round_fp8(x, dtype).astype(np.float32)
    return QuantizedMatrix(values, scales, granularity, dtype)


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    return q.values.astype(np.float32) * q.broadcast_scales()


@dataclass
class SmoothState:
    mean_k: np.ndarray  # (..., 1, channels)


def smooth_k(k):
    """Subtract the per-channel token mean of K, per (batch, head).

    The shift moves every score row by a constant, so softmax output is unchanged.
    """
    k = np.asarray(k, dtype=np.float32)
    mean = k.mean(axis=-2, keepdims=True, dtype=np.float64).astype(np.float32)
    return k - mean, SmoothState(mean)


def fold_scale_into_q(q, d: int | None = None):
    """Pre-multiply Q by 1/sqrt(d) so kernels never rescale the scores."""
    q = np.asarray(q, dtype=np.float32)
    d = q.shape[-1] if d is None else d
    if d < 1:
        raise ValueError("head dim must be >= 1")
    return q * np.float32(1.0 / math.sqrt(d))


def quantize_p_static(p, dtype: str = "int8") -> QuantizedMatrix:
    """Quantize an online-softmax block with the fixed scale ``1/qmax``.

    Entries must lie in [0, 1]: the running max has already been subtracted.
    """
    p = np.asarray(p, dtype=np.float32)
    if p.size and (p.min() < 0 or p.max() > 1 + _P_SLACK) or not np.all(np.isfinite(p)):
        raise ValueError("P block entries must lie in [0, 1]")
    g = Granularity("block", max(p.shape[-2], 1))
    if dtype == "int8":
        values = np.minimum(np.rint(p.astype(np.float64) * INT8_MAX), INT8_MAX).astype(np.int8)
        return QuantizedMatrix(values, np.full(p.shape[:-2] + (1,), STATIC_P_SCALE), g, dtype)
    qmax = fp8_format(dtype).max_finite
    values = round_fp8(p.astype(np.float64) * qmax, dtype).astype(np.float32)
    return QuantizedMatrix(values, np.full(p.shape[:-2] + (1,), np.float32(1 / qmax)), g, dtype)


def static_vs_per_token_mismatches(p) -> int:
    """Count elements where the static-scale P codes differ from per-token INT8 codes.

    The two agree whenever each row's max is 1, i.e. when the running max equals
    the block's own row max.
    """
    static = quantize_p_static(p).values
    token = quantize(p, PER_TOKEN, "int8").values
    return int(np.count_nonzero(static != token))
