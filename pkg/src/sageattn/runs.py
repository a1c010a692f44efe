"""Accuracy sweeps, calibration and desk-scale benchmarks, reported as JSON-ready dicts.

Every accuracy number is a pure function of the inputs and configuration.
Timings are wall-clock measurements of the CPU emulation and say nothing about
GPU speedups.
"""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .attention import (
    VARIANT_NAMES,
    VARIANTS,
    AttentionInput,
    KernelConfig,
    flash_attention_fp,
    naive_attention,
    sage_attention,
)
from .metrics import DEFAULT_THRESHOLD, AccuracyReport, calibrate
from .quant import DTYPES
from .synth import SynthSpec, generate

SANITY_TOLERANCE = 2e-6
TIMING_NOTE = "wall-clock of a CPU emulation; not a hardware speedup measurement"


def resolve_variants(names: Iterable[str]) -> list[str]:
    keys = []
    for name in names:
        for part in str(name).lower().split(","):
            part = part.strip()
            if not part:
                continue
            if part == "all":
                keys.extend(VARIANTS)
            elif part in VARIANTS:
                keys.append(part)
            else:
                raise ValueError(f"unknown variant {part!r}; choose from t, b, vt, vb, all")
    return list(dict.fromkeys(keys))


def _config_dict(cfg: KernelConfig) -> dict:
    return {"name": cfg.name, **asdict(cfg)}


def _accuracy_row(ref, inp, cfg: KernelConfig, diagnostics=None) -> dict:
    t0 = time.perf_counter()
    out = sage_attention(inp, cfg, diagnostics)
    elapsed = time.perf_counter() - t0
    return {**_config_dict(cfg), **AccuracyReport.compare(ref, out).to_dict(), "seconds": elapsed}


def sanity_check(inp: AttentionInput, ref=None, block_q=128, block_kv=64) -> dict:
    """Flash-vs-naive self-check of the tiling engine.

    The pass/fail check runs in binary64 so that it isolates tiling from
    rounding; the binary32 difference is reported alongside.
    """
    ref = naive_attention(inp) if ref is None else ref
    d64 = float(np.abs(flash_attention_fp(inp, block_q, block_kv, dtype=np.float64) - ref).max())
    d32 = float(np.abs(flash_attention_fp(inp, block_q, block_kv, dtype=np.float32) - ref).max())
    return {
        "flash_vs_naive_max_abs": d64,
        "flash32_vs_naive_max_abs": d32,
        "tolerance": SANITY_TOLERANCE,
        "passed": d64 <= SANITY_TOLERANCE,
    }


def run_accuracy(inp: AttentionInput, variants: Sequence[str] = ("all",), *,
                 no_smooth: bool = False, dtype_sweep: bool = False,
                 block_q: int = 128, block_kv: int = 64, source: dict | None = None) -> dict:
    """Compare SageAttention variants against the naive oracle on one input."""
    keys = resolve_variants(variants)
    ref = naive_attention(inp)
    report = {
        "command": "accuracy",
        "version": __version__,
        "source": source or {},
        "config": {"shape": list(inp.shape), "causal": inp.causal, "variants": keys,
                   "no_smooth": no_smooth, "dtype_sweep": dtype_sweep,
                   "block_q": block_q, "block_kv": block_kv},
        "sanity": sanity_check(inp, ref, block_q, block_kv),
        "results": [],
        "diagnostics": {},
        "timing_note": TIMING_NOTE,
    }
    for key in keys:
        cfg = VARIANTS[key].with_blocks(block_q, block_kv)
        diag = {}
        report["results"].append({"variant": VARIANT_NAMES[key], **_accuracy_row(ref, inp, cfg, diag)})
        if diag.get("p_elements"):
            report["diagnostics"][VARIANT_NAMES[key]] = diag
        if no_smooth:
            cfg = replace(cfg, smooth_k=False)
            report["results"].append({"variant": VARIANT_NAMES[key], **_accuracy_row(ref, inp, cfg)})
    if dtype_sweep:
        report["dtype_sweep"] = dtype_sweep_rows(inp, ref, smooth_k=not no_smooth,
                                                 block_q=block_q, block_kv=block_kv)
    return report


def dtype_sweep_rows(inp, ref=None, *, smooth_k=True, block_q=128, block_kv=64) -> list[dict]:
    """Per-token Q/K in each dtype crossed with each P~/V arm, plus the binary16 arms."""
    ref = naive_attention(inp) if ref is None else ref
    arms = [(qk, pv) for qk in DTYPES for pv in ("e4m3", "e5m2", "int8")]
    arms += [("int8", "fp16_acc"), ("int8", "fp32_acc")]
    rows = []
    for qk, pv in arms:
        cfg = KernelConfig("token", pv, qk_dtype=qk, block_q=block_q, block_kv=block_kv,
                           smooth_k=smooth_k)
        rows.append({"qk_dtype": qk, "pv": pv, **_accuracy_row(ref, inp, cfg)})
    return rows


def run_calibrate(layers: Sequence[Sequence[AttentionInput]], threshold: float = DEFAULT_THRESHOLD,
                  *, aggregate: str = "mean", candidate: KernelConfig = VARIANTS["vb"],
                  fallback: KernelConfig = VARIANTS["b"], source: dict | None = None) -> dict:
    if not layers:
        raise ValueError("no calibration layers given")
    plan = calibrate(layers, candidate, fallback, threshold, aggregate)
    return {"command": "calibrate", "version": __version__, "source": source or {},
            "plan": plan.to_dict()}


def s_stage_macs(shape) -> int:
    b, h, n, d = (int(x) for x in shape)
    return b * h * n * n * d


def run_bench(shapes: Sequence[tuple], variants: Sequence[str] = ("all",), repeats: int = 3, *,
              seed: int = 0, distribution: str = "normal", causal: bool = False,
              block_q: int = 128, block_kv: int = 64) -> dict:
    """Median wall-clock per (shape, variant), with accuracy and S-stage op counts."""
    if repeats < 3:
        raise ValueError("bench needs repeats >= 3 for a meaningful median")
    keys = resolve_variants(variants)
    rows = []
    for shape in shapes:
        inp = generate(SynthSpec(distribution, tuple(shape), seed, causal=causal))
        ref = naive_attention(inp)
        for key in keys:
            cfg = VARIANTS[key].with_blocks(block_q, block_kv)
            times = []
            out = None
            for _ in range(repeats):
                t0 = time.perf_counter()
                out = sage_attention(inp, cfg)
                times.append(time.perf_counter() - t0)
            rows.append({
                "shape": list(shape),
                "variant": VARIANT_NAMES[key],
                "median_seconds": statistics.median(times),
                "seconds": times,
                "s_stage_macs": s_stage_macs(shape),
                **AccuracyReport.compare(ref, out).to_dict(),
            })
    return {"command": "bench", "version": __version__,
            "config": {"shapes": [list(s) for s in shapes], "variants": keys, "repeats": repeats,
                       "seed": seed, "distribution": distribution, "causal": causal,
                       "block_q": block_q, "block_kv": block_kv},
            "results": rows, "timing_note": TIMING_NOTE}


def write_json(report: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2) + "\n")
