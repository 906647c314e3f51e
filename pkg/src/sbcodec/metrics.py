"""PSNR, MS-SSIM, and dataset averaging.

Both metrics operate on the 8-bit scale: planes in [0, 1] are multiplied
by 255 before any arithmetic, so values are comparable to codecs that
work directly on uint8 data. Per-image scores average the three YUV
components; dataset scores are the arithmetic mean over images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .imageio import ImagePlanes

__all__ = [
    "PSNR_CAP",
    "QualityScore",
    "psnr",
    "msssim_plane",
    "msssim",
    "dataset_summary",
]

# Reported for identical planes instead of infinity.
PSNR_CAP = 99.0

# Standard 5-scale MS-SSIM constants: per-scale exponents, 11x11 Gaussian
# window with sigma 1.5, and stabilizers on the 8-bit scale.
_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2

# 5 dyadic scales of an 11-tap window need at least 11 * 2^4 pixels.
MSSSIM_MIN_DIM = _WINDOW_SIZE * 2 ** (len(_MSSSIM_WEIGHTS) - 1)


@dataclass
class QualityScore:
    """Per-image or dataset-aggregate quality numbers."""

    psnr_y: float
    psnr_u: float
    psnr_v: float
    psnr_avg: float
    msssim_avg: float
    bpp: float


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB between two [0, 1] planes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean(((a - b) * 255.0) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(255.0**2 / mse))


def _gaussian_window() -> np.ndarray:
    half = (_WINDOW_SIZE - 1) / 2.0
    coords = np.arange(_WINDOW_SIZE) - half
    g = np.exp(-(coords**2) / (2.0 * _WINDOW_SIGMA**2))
    window = np.outer(g, g)
    return window / window.sum()


_WINDOW = _gaussian_window()


def _ssim_maps(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Luminance and contrast-structure maps over valid window positions."""
    mu_a = fftconvolve(a, _WINDOW, mode="valid")
    mu_b = fftconvolve(b, _WINDOW, mode="valid")
    sigma_aa = fftconvolve(a * a, _WINDOW, mode="valid") - mu_a * mu_a
    sigma_bb = fftconvolve(b * b, _WINDOW, mode="valid") - mu_b * mu_b
    sigma_ab = fftconvolve(a * b, _WINDOW, mode="valid") - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + _C1) / (mu_a * mu_a + mu_b * mu_b + _C1)
    cs = (2.0 * sigma_ab + _C2) / (sigma_aa + sigma_bb + _C2)
    return lum, cs


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2, x.shape[1] // 2
    return x[: 2 * h, : 2 * w].reshape(h, 2, w, 2).mean(axis=(1, 3))


def msssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    """5-scale MS-SSIM between two [0, 1] planes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < MSSSIM_MIN_DIM:
        raise ValueError(
            f"image side {min(a.shape)} too small for 5 scales "
            f"(need >= {MSSSIM_MIN_DIM})"
        )
    a = a * 255.0
    b = b * 255.0
    result = 1.0
    for scale, weight in enumerate(_MSSSIM_WEIGHTS):
        lum, cs = _ssim_maps(a, b)
        if scale == len(_MSSSIM_WEIGHTS) - 1:
            term = float(np.mean(lum * cs))
        else:
            term = float(np.mean(cs))
            a = _downsample(a)
            b = _downsample(b)
        result *= max(term, 0.0) ** weight
    return result


def msssim(x: ImagePlanes, y: ImagePlanes) -> float:
    """MS-SSIM averaged over the three YUV planes."""
    return float(
        np.mean([msssim_plane(x.planes[p], y.planes[p]) for p in range(3)])
    )


def dataset_summary(pairs: list[tuple[ImagePlanes, ImagePlanes, float]]) -> QualityScore:
    """Average quality over (original, reconstruction, bpp) pairs.

    Scores are computed per image (each already averaged over its three
    components) and then averaged over the dataset.
    """
    if not pairs:
        raise ValueError("no image pairs to summarize")
    psnr_planes = []
    msssim_vals = []
    bpps = []
    for orig, recon, bpp in pairs:
        psnr_planes.append([psnr(orig.planes[p], recon.planes[p]) for p in range(3)])
        msssim_vals.append(msssim(orig, recon))
        bpps.append(bpp)
    per_plane = np.mean(psnr_planes, axis=0)
    return QualityScore(
        psnr_y=float(per_plane[0]),
        psnr_u=float(per_plane[1]),
        psnr_v=float(per_plane[2]),
        psnr_avg=float(np.mean(psnr_planes)),
        msssim_avg=float(np.mean(msssim_vals)),
        bpp=float(np.mean(bpps)),
    )
