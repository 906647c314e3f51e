import numpy as np
import pytest

from sbcodec.imageio import ImagePlanes


def synthetic_images(n: int, size: int, seed: int) -> list[ImagePlanes]:
    """Small deterministic corpus of smooth, structured YUV images.

    Each image mixes random Gaussian blobs, a global gradient, and a
    sinusoid in Y, with mild chroma variation, so the feature maps see
    spatially correlated content at desk scale.
    """
    rng = np.random.default_rng(seed)
    images = []
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for _ in range(n):
        y = np.zeros((size, size))
        for _ in range(6):
            cy, cx = rng.uniform(0, size, 2)
            spread = rng.uniform(size / 12, size / 3)
            amp = rng.uniform(-0.6, 0.6)
            y += amp * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * spread**2)))
        gx, gy = rng.uniform(-0.3, 0.3, 2)
        y += gx * xx / size + gy * yy / size
        y += rng.uniform(0, 0.25) * np.sin(
            2 * np.pi * (xx * rng.uniform(0.5, 3) / size + rng.uniform())
        )
        y = 0.5 + 0.5 * (y - y.mean()) / max(np.abs(y - y.mean()).max(), 1e-9)
        u = 0.5 + rng.uniform(-0.15, 0.15) * np.sin(
            2 * np.pi * (yy * rng.uniform(0.5, 2) / size + rng.uniform())
        )
        v = 0.5 + rng.uniform(-0.15, 0.15) * (xx / size - 0.5)
        images.append(ImagePlanes(np.clip(np.stack([y, u, v]), 0.0, 1.0)))
    return images


@pytest.fixture(scope="session")
def corpus() -> list[ImagePlanes]:
    return synthetic_images(6, 160, seed=99)
