"""Seeded synthetic Q/K/V generators.

``normal`` draws i.i.d. standard normals. ``outlier`` mimics the channel
outliers seen in real Q and K: every token is a large per-channel bias shared
by all tokens plus a small token-wise signal. The noise is standardized per
channel over tokens, so the token mean of a channel is exactly its bias and the
token standard deviation exactly ``noise_scale``. V stays standard normal.

``sink`` is a stress case for static-scale INT8 P~: key 0 draws a logit of up
to ``sink_logit`` (strength varies per query row), so once it sets the running
max the remaining keys' P~ entries mostly fall below 1/254 and round to zero.
V carries a shared per-channel bias of ``v_bias`` so the lost mass matters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionInput

DEFAULT_SHAPE = (2, 8, 1024, 64)
DISTRIBUTIONS = ("normal", "outlier", "sink")


@dataclass(frozen=True)
class SynthSpec:
    distribution: str = "normal"  # "normal" | "outlier" | "sink"
    shape: tuple = DEFAULT_SHAPE
    seed: int = 0
    bias_scale: float = 10.0
    noise_scale: float = 1.0
    causal: bool = False
    sink_logit: float = 8.0
    v_bias: float = 1.0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if len(self.shape) != 4 or any(int(s) < 1 for s in self.shape):
            raise ValueError(f"shape must be four positive ints (B, H, N, d), got {self.shape}")
        if self.distribution == "outlier" and self.shape[2] < 2:
            raise ValueError("outlier data needs at least two tokens")


def rng_for(seed: int) -> np.random.Generator:
    # Philox is counter-based: the stream depends only on the seed
    return np.random.Generator(np.random.Philox(seed))


def _channel_outlier(rng, shape, bias_scale, noise_scale):
    b, h, n, d = shape
    signs = rng.choice(np.array([-1.0, 1.0]), size=(b, h, 1, d))
    noise = rng.standard_normal((b, h, n, d))
    noise -= noise.mean(axis=-2, keepdims=True)
    noise /= noise.std(axis=-2, keepdims=True)
    return signs * bias_scale + noise * noise_scale


def generate(spec: SynthSpec) -> AttentionInput:
    rng = rng_for(spec.seed)
    shape = tuple(int(s) for s in spec.shape)
    if spec.distribution == "normal":
        q, k, v = (rng.standard_normal(shape) for _ in range(3))
    elif spec.distribution == "sink":
        q, k, v = (rng.standard_normal(shape) for _ in range(3))
        d = shape[-1]
        q[..., 0] = np.sqrt(d) * rng.uniform(0.0, 1.0, shape[:-1])
        k[..., 0] = 0.0
        k[..., 0, 0] = spec.sink_logit
        v += spec.v_bias * rng.choice(np.array([-1.0, 1.0]), size=shape[:2] + (1, d))
    else:
        q = _channel_outlier(rng, shape, spec.bias_scale, spec.noise_scale)
        k = _channel_outlier(rng, shape, spec.bias_scale, spec.noise_scale)
        v = rng.standard_normal(shape)
    return AttentionInput(q.astype(np.float32), k.astype(np.float32), v.astype(np.float32),
                          causal=spec.causal)
