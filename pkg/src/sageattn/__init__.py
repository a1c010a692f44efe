"""CPU emulation of SageAttention: INT8 attention with K smoothing and an FP16 accumulator."""

__version__ = "0.1.0"

from .attention import (  # noqa: E402
    VARIANTS,
    AttentionInput,
    KernelConfig,
    flash_attention_fp,
    naive_attention,
    sage_attention,
    variant,
)
from .metrics import AccuracyReport, LayerPlan, calibrate, cosine_sim, relative_l1, rmse  # noqa: E402

__all__ = [
    "VARIANTS",
    "AccuracyReport",
    "AttentionInput",
    "KernelConfig",
    "LayerPlan",
    "calibrate",
    "cosine_sim",
    "flash_attention_fp",
    "naive_attention",
    "relative_l1",
    "rmse",
    "sage_attention",
    "variant",
]
