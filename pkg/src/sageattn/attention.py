"""Reference attention, tiled FlashAttention-2 and the SageAttention kernels.

All tiled paths share :func:`_online_softmax`, which walks key blocks in order
and keeps the running max ``m``, running sum ``l`` and a path-specific output
accumulator. Query blocks are independent, so every query row of every head is
processed in one vectorized sweep per key block; tiles above the causal
diagonal are never touched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import quant
from .numerics import (
    fp16_matmul_fp16acc,
    int8_matmul_i32acc,
    matmul_fp32acc,
    round_to_fp16,
)

DEFAULT_BLOCK_Q = 128
DEFAULT_BLOCK_KV = 64

PV_PATHS = ("fp16_acc", "fp32_acc", "int8", "e4m3", "e5m2")
QK_GRANULARITIES = ("token", "block", "tensor")


@dataclass(frozen=True)
class AttentionInput:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    causal: bool = False

    def __post_init__(self):
        shapes = {t.shape for t in (self.q, self.k, self.v)}
        if len(shapes) != 1:
            raise ValueError(f"q, k, v shapes differ: {[t.shape for t in (self.q, self.k, self.v)]}")
        if self.q.ndim != 4:
            raise ValueError(f"expected (batch, heads, tokens, dim), got {self.q.shape}")
        for name in ("q", "k", "v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def shape(self):
        return self.q.shape


@dataclass(frozen=True)
class KernelConfig:
    """One SageAttention kernel: Q/K granularity and the P~V path.

    ``pv_path`` is ``fp16_acc`` (P~ and V in binary16, binary16 accumulator),
    ``fp32_acc`` (same operands, binary32 accumulator; an ablation arm) or a
    quantized dtype (``int8``, ``e4m3``, ``e5m2``) with static-scale per-block
    P~ and per-channel V.
    """

    qk_granularity: str = "block"
    pv_path: str = "fp16_acc"
    qk_dtype: str = "int8"
    block_q: int = DEFAULT_BLOCK_Q
    block_kv: int = DEFAULT_BLOCK_KV
    smooth_k: bool = True

    def __post_init__(self):
        if self.qk_granularity not in QK_GRANULARITIES:
            raise ValueError(f"Q/K granularity must be one of {QK_GRANULARITIES}")
        if self.pv_path not in PV_PATHS:
            raise ValueError(f"pv_path must be one of {PV_PATHS}")
        if self.qk_dtype not in quant.DTYPES:
            raise ValueError(f"qk_dtype must be one of {quant.DTYPES}")
        if self.block_q < 1 or self.block_kv < 1:
            raise ValueError("block sizes must be >= 1")

    @property
    def name(self) -> str:
        for key, cfg in VARIANTS.items():
            if _same_kernel(cfg, self):
                return VARIANT_NAMES[key]
        return (f"custom(qk={self.qk_dtype}/{self.qk_granularity}, pv={self.pv_path}"
                f"{'' if self.smooth_k else ', no-smooth'})")

    def with_blocks(self, block_q: int, block_kv: int) -> "KernelConfig":
        return replace(self, block_q=block_q, block_kv=block_kv)


def _same_kernel(a: KernelConfig, b: KernelConfig) -> bool:
    return (a.qk_granularity, a.pv_path, a.qk_dtype, a.smooth_k) == (
        b.qk_granularity, b.pv_path, b.qk_dtype, b.smooth_k)


VARIANTS = {
    "t": KernelConfig("token", "fp16_acc"),
    "b": KernelConfig("block", "fp16_acc"),
    "vt": KernelConfig("token", "int8"),
    "vb": KernelConfig("block", "int8"),
}
VARIANT_NAMES = {"t": "SAGEAttn-T", "b": "SAGEAttn-B", "vt": "SAGEAttn-vT", "vb": "SAGEAttn-vB"}


def variant(key: str, **overrides) -> KernelConfig:
    return replace(VARIANTS[key.lower()], **overrides)


# ---------------------------------------------------------------- oracle


def naive_attention(inp: AttentionInput) -> np.ndarray:
    """softmax(QK^T / sqrt(d)) V, materialized, in binary64."""
    q = inp.q.astype(np.float64)
    k = inp.k.astype(np.float64)
    v = inp.v.astype(np.float64)
    s = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    if inp.causal:
        n = q.shape[-2]
        s = np.where(np.triu(np.ones((n, n), dtype=bool), 1), -np.inf, s)
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    return p @ v


# ---------------------------------------------------------------- tiling engine


def apply_causal_tiling(i: int, j: int, block_q: int, block_kv: int,
                        n_tokens: int | None = None) -> str:
    """Classify tile (query block ``i``, key block ``j``) as full, diagonal or skip."""
    q_start = i * block_q
    q_end = (i + 1) * block_q - 1
    if n_tokens is not None:
        q_end = min(q_end, n_tokens - 1)
    k_start = j * block_kv
    k_end = (j + 1) * block_kv - 1
    if n_tokens is not None:
        k_end = min(k_end, n_tokens - 1)
    if k_start > q_end:
        return "skip"
    if k_end <= q_start:
        return "full"
    return "diagonal"


def _first_live_row(j, block_q, block_kv, n):
    n_qblocks = -(-n // block_q)
    for i in range(n_qblocks):
        if apply_causal_tiling(i, j, block_q, block_kv, n) != "skip":
            return i * block_q
    return n


def _online_softmax(n, block_q, block_kv, causal, scores, accumulate, dtype, lead_shape):
    """Drive the key-block loop; returns the final running (m, l)."""
    if block_q < 1 or block_kv < 1:
        raise ValueError("block sizes must be >= 1")
    m = np.full(lead_shape + (n,), -np.inf, dtype=dtype)
    l = np.zeros(lead_shape + (n,), dtype=dtype)
    for j, ks in enumerate(range(0, n, block_kv)):
        ke = min(ks + block_kv, n)
        r0 = _first_live_row(j, block_q, block_kv, n) if causal else 0
        if r0 >= n:
            continue
        s = scores(r0, ks, ke)
        if causal and ke - 1 > r0:
            rows = np.arange(r0, n)[:, None]
            cols = np.arange(ks, ke)[None, :]
            s = np.where(cols > rows, dtype.type(-np.inf), s)
        m_old = m[..., r0:]
        m_new = np.maximum(m_old, s.max(axis=-1))
        alpha = np.exp(m_old - m_new)
        p = np.exp(s - m_new[..., None])
        l[..., r0:] = alpha * l[..., r0:] + p.sum(axis=-1, dtype=dtype)
        m[..., r0:] = m_new
        accumulate(r0, ks, ke, alpha, p)
    return m, l


def flash_attention_fp(inp: AttentionInput, block_q: int = DEFAULT_BLOCK_Q,
                       block_kv: int = DEFAULT_BLOCK_KV, dtype=np.float32) -> np.ndarray:
    """Tiled FlashAttention-2 forward pass in full precision (binary32 by default)."""
    dtype = np.dtype(dtype)
    q = inp.q.astype(dtype) * dtype.type(1.0 / math.sqrt(inp.q.shape[-1]))
    kt = np.swapaxes(inp.k.astype(dtype), -1, -2)
    v = inp.v.astype(dtype)
    *lead, n, d = q.shape
    acc = np.zeros(q.shape, dtype=dtype)

    def scores(r0, ks, ke):
        return q[..., r0:, :] @ kt[..., :, ks:ke]

    def accumulate(r0, ks, ke, alpha, p):
        acc[..., r0:, :] = alpha[..., None] * acc[..., r0:, :] + p @ v[..., ks:ke, :]

    _, l = _online_softmax(n, block_q, block_kv, inp.causal, scores, accumulate, dtype, tuple(lead))
    return acc / l[..., None]


# ---------------------------------------------------------------- SageAttention


def _qk_granularity(kind, block):
    return quant.per_block(block) if kind == "block" else quant.Granularity(kind)


class _Fp16Accumulator:
    """Binary16 output block; the rescale happens in binary32 and is rounded back."""

    def __init__(self, v, lead_shape):
        self.v = round_to_fp16(v)
        self.acc = np.zeros(v.shape)

    def __call__(self, r0, ks, ke, alpha, p):
        rows = self.acc[..., r0:, :]
        rescaled = round_to_fp16(rows.astype(np.float32) * alpha[..., None])
        self.acc[..., r0:, :] = fp16_matmul_fp16acc(
            round_to_fp16(p), self.v[..., ks:ke, :], acc=rescaled, validate=False)

    def result(self):
        return self.acc.astype(np.float32)


class _Fp32Accumulator:
    def __init__(self, v, lead_shape):
        self.v = round_to_fp16(v)
        self.acc = np.zeros(v.shape, dtype=np.float32)

    def __call__(self, r0, ks, ke, alpha, p):
        pv = matmul_fp32acc(round_to_fp16(p), self.v[..., ks:ke, :])
        self.acc[..., r0:, :] = alpha[..., None] * self.acc[..., r0:, :] + pv

    def result(self):
        return self.acc


class _QuantAccumulator:
    """Static-scale per-block P~ and per-channel V, dequantized into binary32."""

    def __init__(self, v, lead_shape, dtype, diagnostics):
        self.dtype = dtype
        self.vq = quant.quantize(v, quant.PER_CHANNEL, dtype)
        self.v_vals = self.vq.values if dtype == "int8" else self.vq.values.astype(np.float64)
        self.acc = np.zeros(v.shape, dtype=np.float32)
        self.diagnostics = diagnostics

    def __call__(self, r0, ks, ke, alpha, p):
        pq = quant.quantize_p_static(p, self.dtype)
        if self.dtype == "int8":
            prod = int8_matmul_i32acc(pq.values, self.v_vals[..., ks:ke, :]).astype(np.float32)
        else:
            prod = matmul_fp32acc(pq.values, self.v_vals[..., ks:ke, :])
        scale = pq.scales[..., None] * self.vq.scales[..., None, :]
        self.acc[..., r0:, :] = alpha[..., None] * self.acc[..., r0:, :] + prod * scale
        if self.diagnostics is not None and self.dtype == "int8":
            miss = quant.static_vs_per_token_mismatches(p)
            d = self.diagnostics
            d["static_scale_mismatches"] += miss
            d["p_elements"] += p.size
            d["max_p_code"] = max(d["max_p_code"], int(pq.values.max(initial=0)))
            if ks == 0:
                # the running max is this block's own row max here
                d["first_block_mismatches"] += miss
                d["first_block_elements"] += p.size

    def result(self):
        return self.acc


def sage_attention(inp: AttentionInput, config: KernelConfig | None = None,
                   diagnostics: dict | None = None) -> np.ndarray:
    """Quantized attention forward pass, returned in binary32.

    Steps per (batch, head): optionally smooth K; fold 1/sqrt(d) into Q;
    quantize Q and K at the configured granularity; for each key block,
    dequantize the integer scores, update the online softmax in binary32 and
    accumulate P~V through the configured path; normalize by the running sum.

    ``diagnostics``, if given, is filled with counters for the INT8 path:
    static-scale vs per-token P~ code mismatches, overall and on the first key
    block, and the largest P~ code seen.
    """
    cfg = config or VARIANTS["b"]
    if diagnostics is not None:
        for key in ("static_scale_mismatches", "p_elements", "first_block_mismatches",
                    "first_block_elements", "max_p_code"):
            diagnostics.setdefault(key, 0)
    *lead, n, d = inp.q.shape
    lead = tuple(lead)

    k = inp.k.astype(np.float32)
    if cfg.smooth_k:
        k, _ = quant.smooth_k(k)
    q = quant.fold_scale_into_q(inp.q, d)
    qq = quant.quantize(q, _qk_granularity(cfg.qk_granularity, cfg.block_q), cfg.qk_dtype)
    kq = quant.quantize(k, _qk_granularity(cfg.qk_granularity, cfg.block_kv), cfg.qk_dtype)
    q_vals = qq.values.astype(np.float64)
    kt_vals = np.swapaxes(kq.values.astype(np.float64), -1, -2)
    q_scale = qq.token_scales()
    k_scale = kq.token_scales()

    def scores(r0, ks, ke):
        if cfg.qk_dtype == "int8":
            s = int8_matmul_i32acc(q_vals[..., r0:, :], kt_vals[..., :, ks:ke]).astype(np.float32)
        else:
            s = matmul_fp32acc(q_vals[..., r0:, :], kt_vals[..., :, ks:ke])
        return s * q_scale[..., r0:, None] * k_scale[..., None, ks:ke]

    if cfg.pv_path == "fp16_acc":
        acc = _Fp16Accumulator(inp.v, lead)
    elif cfg.pv_path == "fp32_acc":
        acc = _Fp32Accumulator(inp.v, lead)
    else:
        acc = _QuantAccumulator(inp.v.astype(np.float32), lead, cfg.pv_path, diagnostics)

    _, l = _online_softmax(n, cfg.block_q, cfg.block_kv, inp.causal, scores, acc,
                           np.dtype(np.float32), lead)
    return acc.result() / l[..., None]
