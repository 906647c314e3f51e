"""Differentiable rate estimation for training.

Test-mode coding is not differentiable, so the trainer estimates the code
length of each bit from its self-information under a probability
regressor fitted to empirical context statistics. The regressor is
bilinear in (soft bit, per-context probability):

    p(soft | ctx) = soft * pi_ctx + (1 - soft) * (1 - pi_ctx)

which interpolates the empirical frequencies exactly at hard bits, has
the closed-form least-squares fit pi_ctx = (n1 + 1) / (n0 + n1 + 2), and
keeps d p / d soft = 2 * pi_ctx - 1 so rate gradients scale with how
biased a context is.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .entropy_codec import N_MODELS, N_SIG_CONTEXTS, ContextId
from .quantizer import QuantIndices, hard_bits

__all__ = [
    "PI_CLAMP",
    "ContextStats",
    "RegressorParams",
    "RateLoss",
    "collect_stats",
    "assign_contexts",
    "fit_regressor",
    "regressor_prob",
    "rate_loss",
    "estimated_bpp",
    "stats_code_length",
    "save_regressor",
    "load_regressor",
]

# Learned probabilities are clamped so self-information stays <= ~13.3 bits
# and gradients stay finite.
PI_CLAMP = 1e-4

_LN2 = float(np.log(2.0))

_SIDECAR_MAGIC = b"SBR1"
_SIDECAR_VERSION = 1


@dataclass
class ContextStats:
    """Per-context (bit=0, bit=1) occurrence counts, shaped (N_MODELS, 2)."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_MODELS, 2):
            raise ValueError(f"expected ({N_MODELS}, 2) counts, got {self.counts.shape}")
        if self.counts.min() < 0:
            raise ValueError("counts must be nonnegative")

    @classmethod
    def empty(cls) -> "ContextStats":
        return cls(np.zeros((N_MODELS, 2), dtype=np.int64))

    def add(self, other: "ContextStats") -> None:
        self.counts += other.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class RegressorParams:
    """Per-context learned probability of bit value 1, shaped (N_MODELS,)."""

    pi: np.ndarray

    def __post_init__(self) -> None:
        self.pi = np.ascontiguousarray(self.pi, dtype=np.float64)
        if self.pi.shape != (N_MODELS,):
            raise ValueError(f"expected ({N_MODELS},) probabilities, got {self.pi.shape}")
        if self.pi.min() < PI_CLAMP or self.pi.max() > 1.0 - PI_CLAMP:
            raise ValueError("probabilities must lie in the clamped range")

    @classmethod
    def uniform(cls) -> "RegressorParams":
        return cls(np.full(N_MODELS, 0.5))


@dataclass
class RateLoss:
    """Estimated total code length in bits and its per-sample gradient."""

    total_bits: float
    per_sample_grad: np.ndarray | None = None


def assign_contexts(q: QuantIndices) -> np.ndarray:
    """Model index (0..24) of every coded bit, shaped (H, W, C, b).

    Runs the exact coding traversal (same order and context rules as the
    entropy codec); the result is position-indexed, with plane k at
    [..., k].
    """
    ctx = np.empty(q.indices.shape + (q.b,), dtype=np.uint8)
    _kernels.trace_contexts(q.indices, q.b, ctx)
    return ctx


def collect_stats(q: QuantIndices) -> ContextStats:
    """Tally (context, bit value) occurrences over the coding traversal."""
    ctx = assign_contexts(q)
    bits = hard_bits(q)
    flat = ctx.ravel().astype(np.int64) * 2 + bits.ravel()
    counts = np.bincount(flat, minlength=2 * N_MODELS).reshape(N_MODELS, 2)
    return ContextStats(counts)


def fit_regressor(stats: ContextStats) -> RegressorParams:
    """Closed-form least-squares fit: Laplace-smoothed relative frequency."""
    n0 = stats.counts[:, 0].astype(np.float64)
    n1 = stats.counts[:, 1].astype(np.float64)
    pi = (n1 + 1.0) / (n0 + n1 + 2.0)
    return RegressorParams(np.clip(pi, PI_CLAMP, 1.0 - PI_CLAMP))


def regressor_prob(q_soft, ctx, params: RegressorParams):
    """p(soft | ctx) under the bilinear regressor.

    ``ctx`` may be a ContextId, a flat model index, or an array of model
    indices broadcastable against ``q_soft``.
    """
    if isinstance(ctx, ContextId):
        ctx = ctx.model_index
    pi = params.pi[np.asarray(ctx)]
    q_soft = np.asarray(q_soft, dtype=np.float64)
    return q_soft * pi + (1.0 - q_soft) * (1.0 - pi)


def rate_loss(
    soft: np.ndarray,
    contexts: np.ndarray,
    params: RegressorParams,
    jacobian: np.ndarray | None = None,
) -> RateLoss:
    """Self-information rate of all soft bits, in bits.

    ``soft`` and ``contexts`` are shaped (..., b) and must come from the
    same tensor and traversal. When ``jacobian`` (d soft_k / d f, same
    shape) is given, the per-sample gradient d total_bits / d f is
    assembled by the chain rule:

        -1 / (p * ln 2) * (2 * pi_ctx - 1) * d soft_k / d f

    summed over each sample's b bits. Contexts are constants here; no
    gradient flows through them.
    """
    soft = np.asarray(soft, dtype=np.float64)
    pi = params.pi[contexts]
    p = soft * pi + (1.0 - soft) * (1.0 - pi)
    total_bits = float(-np.log2(p).sum())
    grad = None
    if jacobian is not None:
        dbits_dsoft = -(2.0 * pi - 1.0) / (p * _LN2)
        grad = (dbits_dsoft * jacobian).sum(axis=-1)
    return RateLoss(total_bits, grad)


def estimated_bpp(loss: RateLoss, width: int, height: int) -> float:
    """Normalize an estimated rate to bits per pixel."""
    return loss.total_bits / (width * height)


def stats_code_length(stats: ContextStats, params: RegressorParams) -> float:
    """Code length, in bits, of the tallied bits under the regressor.

    Equals rate_loss evaluated at hard bits: each bit=1 costs -log2(pi)
    and each bit=0 costs -log2(1 - pi) in its context.
    """
    n0 = stats.counts[:, 0].astype(np.float64)
    n1 = stats.counts[:, 1].astype(np.float64)
    return float(-(n1 * np.log2(params.pi) + n0 * np.log2(1.0 - params.pi)).sum())


def save_regressor(params: RegressorParams, path) -> None:
    """Write the sidecar: magic, version, context count, Q16 probabilities."""
    fixed = np.clip(np.round(params.pi * 65536.0), 1, 65535).astype(np.uint16)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sBH", _SIDECAR_MAGIC, _SIDECAR_VERSION, N_MODELS))
        fh.write(fixed.astype("<u2").tobytes())


def load_regressor(path) -> RegressorParams:
    """Read a regressor sidecar written by :func:`save_regressor`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 7 or data[:4] != _SIDECAR_MAGIC:
        raise ValueError(f"not a regressor sidecar: {path}")
    version, count = struct.unpack("<BH", data[4:7])
    if version != _SIDECAR_VERSION:
        raise ValueError(f"unsupported sidecar version {version}")
    need = 7 + 2 * count
    if count != N_MODELS or len(data) < need:
        raise ValueError("sidecar context count inconsistent")
    fixed = np.frombuffer(data[7:need], dtype="<u2").astype(np.float64)
    pi = np.clip(fixed / 65536.0, PI_CLAMP, 1.0 - PI_CLAMP)
    return RegressorParams(pi)
