"""Accuracy metrics and adaptive per-layer kernel selection."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .attention import VARIANTS, AttentionInput, KernelConfig, naive_attention, sage_attention

DEFAULT_THRESHOLD = 0.998


def _pair(o, o2):
    o = np.asarray(o, dtype=np.float64).ravel()
    o2 = np.asarray(o2, dtype=np.float64).ravel()
    if o.shape != o2.shape:
        raise ValueError(f"shape mismatch: {np.shape(o)} vs {np.shape(o2)}")
    return o, o2


def cosine_sim(o, o2) -> float:
    o, o2 = _pair(o, o2)
    denom = math.sqrt(np.dot(o, o)) * math.sqrt(np.dot(o2, o2))
    if denom == 0:
        warnings.warn("cosine similarity of a zero vector; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.dot(o, o2) / denom)


def relative_l1(o, o2) -> float:
    o, o2 = _pair(o, o2)
    ref = np.abs(o).sum()
    if ref == 0:
        raise ValueError("relative L1 is undefined for an all-zero reference")
    return float(np.abs(o - o2).sum() / ref)


def rmse(o, o2) -> float:
    o, o2 = _pair(o, o2)
    return float(math.sqrt(np.mean((o - o2) ** 2)))


@dataclass
class AccuracyReport:
    cos_sim: float
    relative_l1: float
    rmse: float

    @classmethod
    def compare(cls, reference, output) -> "AccuracyReport":
        return cls(cosine_sim(reference, output), relative_l1(reference, output), rmse(reference, output))

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- adaptive selection


@dataclass
class LayerPlan:
    assignments: list[str]
    cos_sims: list[float]
    threshold: float = DEFAULT_THRESHOLD
    candidate: str = "SAGEAttn-vB"
    fallback: str = "SAGEAttn-B"
    aggregate: str = "mean"
    batches: list[int] = field(default_factory=list)

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "candidate": self.candidate,
            "fallback": self.fallback,
            "aggregate": self.aggregate,
            "layers": [
                {"layer": i, "kernel": k, "cos_sim": c, "batches": b}
                for i, (k, c, b) in enumerate(zip(self.assignments, self.cos_sims,
                                                  self.batches or [None] * len(self.cos_sims)))
            ],
        }

    @classmethod
    def from_dict(cls, data) -> "LayerPlan":
        layers = data["layers"]
        return cls(
            assignments=[x["kernel"] for x in layers],
            cos_sims=[x["cos_sim"] for x in layers],
            threshold=data["threshold"],
            candidate=data["candidate"],
            fallback=data["fallback"],
            aggregate=data.get("aggregate", "mean"),
            batches=[x.get("batches") for x in layers],
        )


def layer_cos_sim(batches: Sequence[AttentionInput], config: KernelConfig, aggregate: str = "mean") -> float:
    """Aggregate cosine similarity of ``config`` against the naive oracle over batches."""
    if not batches:
        raise ValueError("a layer needs at least one calibration batch")
    sims = [cosine_sim(naive_attention(x), sage_attention(x, config)) for x in batches]
    if aggregate == "mean":
        return float(np.mean(sims))
    if aggregate == "min":
        return float(min(sims))
    raise ValueError(f"unknown aggregate {aggregate!r}")


def assign(cos_sims: Sequence[float], threshold: float, candidate: str = "SAGEAttn-vB",
           fallback: str = "SAGEAttn-B") -> list[str]:
    return [candidate if c > threshold else fallback for c in cos_sims]


def calibrate(layers: Sequence[Sequence[AttentionInput]],
              candidate: KernelConfig = VARIANTS["vb"],
              fallback: KernelConfig = VARIANTS["b"],
              threshold: float = DEFAULT_THRESHOLD,
              aggregate: str = "mean") -> LayerPlan:
    """Pick ``candidate`` for each layer whose calibration cosine similarity beats ``threshold``.

    Only the candidate is measured; the fallback is assumed accurate everywhere.
    """
    if not layers:
        raise ValueError("empty calibration set")
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    sims = [layer_cos_sim(batches, candidate, aggregate) for batches in layers]
    return LayerPlan(
        assignments=assign(sims, threshold, candidate.name, fallback.name),
        cos_sims=sims,
        threshold=threshold,
        candidate=candidate.name,
        fallback=fallback.name,
        aggregate=aggregate,
        batches=[len(b) for b in layers],
    )
