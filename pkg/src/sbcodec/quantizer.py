"""Power-of-two uniform quantizer and hard-bit extraction.

Feature samples live in [0, 1) and are quantized with step size 2^-b, so
the index is simply the first b binary digits of the sample. Inverse
quantization reconstructs the lower cell edge q * 2^-b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FEATURE_MAX",
    "QuantizerConfig",
    "QuantIndices",
    "clamp_features",
    "quantize",
    "dequantize",
    "hard_bit",
    "hard_bits",
]

# Upper clamp applied before quantization so floor(f * 2^b) < 2^b always
# holds; exactly representable in float64 for every supported b.
FEATURE_MAX = 1.0 - 2.0**-24


@dataclass(frozen=True)
class QuantizerConfig:
    """Bit depth of the quantizer (step size 2^-b)."""

    b: int

    def __post_init__(self) -> None:
        if not 1 <= self.b <= 16:
            raise ValueError(f"bit depth must be in [1, 16], got {self.b}")


@dataclass
class QuantIndices:
    """Integer quantization indices, ``indices`` shaped (H, W, C)."""

    indices: np.ndarray
    b: int

    def __post_init__(self) -> None:
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        if self.indices.ndim != 3:
            raise ValueError(f"expected (H, W, C) index array, got {self.indices.shape}")
        if not 1 <= self.b <= 16:
            raise ValueError(f"bit depth must be in [1, 16], got {self.b}")
        if self.indices.size and (
            self.indices.min() < 0 or self.indices.max() >= (1 << self.b)
        ):
            raise ValueError(f"indices out of range for b={self.b}")

    @property
    def height(self) -> int:
        return self.indices.shape[0]

    @property
    def width(self) -> int:
        return self.indices.shape[1]

    @property
    def channels(self) -> int:
        return self.indices.shape[2]


def clamp_features(f: np.ndarray) -> np.ndarray:
    """Clamp feature samples to [0, FEATURE_MAX]."""
    return np.clip(f, 0.0, FEATURE_MAX)


def quantize(f: np.ndarray, cfg: QuantizerConfig) -> QuantIndices:
    """Quantize features elementwise: q = floor(f * 2^b), shape preserved."""
    f = clamp_features(np.asarray(f, dtype=np.float64))
    q = np.floor(f * (1 << cfg.b)).astype(np.int32)
    return QuantIndices(q, cfg.b)


def dequantize(q: QuantIndices) -> np.ndarray:
    """Reconstruct the lower cell edge: f_hat = q * 2^-b."""
    return q.indices.astype(np.float64) * 2.0**-q.b


def hard_bit(q: int, k: int, b: int) -> int:
    """Bit k of index q, counting from the most significant (k=0 is 2^-1)."""
    if not 0 <= k < b:
        raise ValueError(f"bit position {k} out of range for b={b}")
    return (int(q) >> (b - 1 - k)) & 1


def hard_bits(q: QuantIndices) -> np.ndarray:
    """All hard bits, shaped (H, W, C, b) with plane k at [..., k]."""
    shifts = np.arange(q.b - 1, -1, -1, dtype=np.int32)
    return ((q.indices[..., None] >> shifts) & 1).astype(np.uint8)
