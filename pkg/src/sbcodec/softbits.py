"""Differentiable soft-bit representation of quantization indices.

Each hard bit of a b-bit index is a rectangular wave in the feature sample
f; the soft bit replaces every step edge with a logistic of sharpness
alpha. Bit k (k=0 most significant) superposes 2^(k+1) logistics with
alternating signs at thresholds j * 2^-(k+1):

    soft_k(f) = sum_{j=1..2^(k+1)} (-1)^(j+1) * logistic(alpha * (f - j * 2^-(k+1)))

The analytic derivative uses the logistic identity s' = alpha * s * (1 - s),
so rate gradients never vanish the way hard-bit derivatives do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "SOFT_BIT_CLAMP",
    "SoftBitConfig",
    "sigmoid",
    "soft_bits",
    "soft_bits_grad",
    "soft_bits_with_grad",
    "soft_dequantize",
]

# Soft bits are clamped away from {0, 1} so downstream logarithms stay finite.
SOFT_BIT_CLAMP = 1e-12

# Threshold pairs are processed in blocks of this many terms to bound memory
# for large b; must be even so +/- pairs stay within one block.
_BLOCK = 4096


@dataclass(frozen=True)
class SoftBitConfig:
    """Sharpness alpha of the logistic edges and bit depth b."""

    b: int
    alpha: float = 50.0

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 1 <= self.b <= 16:
            raise ValueError(f"bit depth must be in [1, 16], got {self.b}")


def sigmoid(x, alpha: float = 1.0):
    """Logistic 1 / (1 + exp(-alpha * x)), stable for large |alpha * x|."""
    return expit(alpha * np.asarray(x, dtype=np.float64))


def _bit_sum(f: np.ndarray, k: int, alpha: float, want_value: bool, want_grad: bool):
    """Alternating logistic sum (and/or its derivative) for bit k.

    Terms are accumulated as consecutive (+, -) pairs; each pair is
    nonnegative for the value sum, which avoids cancellation between the
    saturated tails.
    """
    n = 1 << (k + 1)
    step = 2.0 ** -(k + 1)
    value = np.zeros_like(f) if want_value else None
    grad = np.zeros_like(f) if want_grad else None
    for j0 in range(1, n + 1, _BLOCK):
        j = np.arange(j0, min(j0 + _BLOCK, n + 1), dtype=np.float64)
        signs = np.where(j % 2 == 1, 1.0, -1.0)
        s = expit(alpha * (f[..., None] - j * step))
        if want_value:
            value += (s * signs).sum(axis=-1)
        if want_grad:
            grad += (alpha * s * (1.0 - s) * signs).sum(axis=-1)
    return value, grad


def soft_bits(f: np.ndarray, cfg: SoftBitConfig) -> np.ndarray:
    """Soft bits of each feature sample, shaped f.shape + (b,).

    Values are clamped to (SOFT_BIT_CLAMP, 1 - SOFT_BIT_CLAMP).
    """
    values, _ = soft_bits_with_grad(f, cfg, want_grad=False)
    return values


def soft_bits_grad(f: np.ndarray, cfg: SoftBitConfig) -> np.ndarray:
    """Analytic d(soft bit k)/df for each bit, shaped f.shape + (b,)."""
    f = np.asarray(f, dtype=np.float64)
    grad = np.empty(f.shape + (cfg.b,))
    for k in range(cfg.b):
        _, g = _bit_sum(f, k, cfg.alpha, want_value=False, want_grad=True)
        grad[..., k] = g
    return grad


def soft_bits_with_grad(
    f: np.ndarray, cfg: SoftBitConfig, want_grad: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    """Soft bits and (optionally) their derivatives in one pass."""
    f = np.asarray(f, dtype=np.float64)
    values = np.empty(f.shape + (cfg.b,))
    grad = np.empty(f.shape + (cfg.b,)) if want_grad else None
    for k in range(cfg.b):
        v, g = _bit_sum(f, k, cfg.alpha, want_value=True, want_grad=want_grad)
        values[..., k] = v
        if want_grad:
            grad[..., k] = g
    np.clip(values, SOFT_BIT_CLAMP, 1.0 - SOFT_BIT_CLAMP, out=values)
    return values, grad


def soft_dequantize(soft: np.ndarray) -> np.ndarray:
    """Soft reconstruction sum_k soft_k * 2^-(k+1) over the trailing axis."""
    soft = np.asarray(soft, dtype=np.float64)
    b = soft.shape[-1]
    weights = 2.0 ** -(np.arange(b) + 1.0)
    return soft @ weights
