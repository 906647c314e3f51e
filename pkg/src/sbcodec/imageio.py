"""Image I/O, color conversion, padding, and training-patch sampling.

Images move through the pipeline as ``ImagePlanes``: three full-resolution
float64 planes (Y, U, V) with samples in [0, 1]. Eight-bit quantization
happens only at file boundaries (PPM/PGM).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PpmError",
    "PpmHeaderError",
    "PpmMaxvalError",
    "PpmTruncatedError",
    "RgbImage",
    "ImagePlanes",
    "PatchBatch",
    "load_ppm",
    "save_ppm",
    "save_pgm",
    "rgb_to_yuv",
    "yuv_to_rgb",
    "pad_to_multiple",
    "sample_patches",
]


class PpmError(ValueError):
    """Base class for PPM parse failures."""


class PpmHeaderError(PpmError):
    """Magic number or header tokens are not a valid binary PPM header."""


class PpmMaxvalError(PpmError):
    """The file declares a maxval other than 255."""


class PpmTruncatedError(PpmError):
    """The pixel payload is shorter than the header promises."""


@dataclass
class RgbImage:
    """Interleaved 8-bit RGB image, ``pixels`` shaped (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixel array, got {self.pixels.shape}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("image dimensions must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RgbImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.all(self.pixels == other.pixels)
        )


@dataclass
class ImagePlanes:
    """Y, U, V planes in [0, 1], ``planes`` shaped (3, height, width)."""

    planes: np.ndarray

    def __post_init__(self) -> None:
        self.planes = np.ascontiguousarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) plane array, got {self.planes.shape}")

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[1]


@dataclass
class PatchBatch:
    """A batch of equally sized square patches."""

    patches: list[ImagePlanes]

    def __len__(self) -> int:
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, i: int) -> ImagePlanes:
        return self.patches[i]


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Return the next header token, skipping whitespace and # comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos : pos + 1] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise PpmHeaderError("unexpected end of header")
    return data[start:pos], pos


def load_ppm(path) -> RgbImage:
    """Load a binary PPM (P6, maxval 255) file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6" or data[2:3] not in (b" ", b"\t", b"\r", b"\n", b"#"):
        raise PpmHeaderError(f"not a binary PPM (P6) file: {path}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise PpmHeaderError(f"non-numeric header token {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PpmHeaderError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PpmMaxvalError(f"unsupported maxval {maxval} (only 255)")
    # Exactly one whitespace byte separates the header from the payload.
    if pos >= len(data) or data[pos : pos + 1] not in b" \t\r\n":
        raise PpmHeaderError("missing whitespace after maxval")
    pos += 1
    need = width * height * 3
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise PpmTruncatedError(
            f"payload has {len(payload)} bytes, header promises {need}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return RgbImage(pixels.copy())


def save_ppm(img: RgbImage, path) -> None:
    """Write a binary PPM (P6, maxval 255) file."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels.tobytes())


def save_pgm(gray: np.ndarray, path) -> None:
    """Write a single-channel uint8 array as a binary PGM (P5, maxval 255)."""
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {gray.shape}")
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(gray.tobytes())


# Full-range BT.601. Chroma offsets put the zero point at 0.5 so all
# planes live in [0, 1].
_RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YUV_OFFSET = np.array([0.0, 0.5, 0.5])
_YUV_TO_RGB = np.array(
    [
        [1.0, 0.0, 1.402],
        [1.0, -0.344136, -0.714136],
        [1.0, 1.772, 0.0],
    ]
)


def rgb_to_yuv(img: RgbImage) -> ImagePlanes:
    """Convert 8-bit RGB to full-range YUV planes in [0, 1] (no subsampling)."""
    rgb = img.pixels.astype(np.float64) / 255.0
    yuv = np.einsum("pc,hwc->phw", _RGB_TO_YUV, rgb) + _YUV_OFFSET[:, None, None]
    return ImagePlanes(yuv)


def yuv_to_rgb(planes: ImagePlanes) -> RgbImage:
    """Convert YUV planes back to 8-bit RGB, clamped and rounded half-up."""
    yuv = planes.planes.copy()
    yuv[1] -= 0.5
    yuv[2] -= 0.5
    rgb = np.einsum("cp,phw->hwc", _YUV_TO_RGB, yuv)
    levels = np.floor(rgb * 255.0 + 0.5)
    return RgbImage(np.clip(levels, 0.0, 255.0).astype(np.uint8))


def pad_to_multiple(planes: ImagePlanes, m: int) -> ImagePlanes:
    """Edge-replicate on the right/bottom up to the next multiple of ``m``."""
    if m < 1:
        raise ValueError(f"padding multiple must be >= 1, got {m}")
    h, w = planes.height, planes.width
    pad_h = (-h) % m
    pad_w = (-w) % m
    if pad_h == 0 and pad_w == 0:
        return ImagePlanes(planes.planes.copy())
    padded = np.pad(planes.planes, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    return ImagePlanes(padded)


def sample_patches(
    images: list[ImagePlanes], size: int, count: int, seed: int
) -> PatchBatch:
    """Draw ``count`` random square crops with random horizontal/vertical flips.

    Deterministic in ``seed``. Every source image must be at least
    ``size`` x ``size``; crop origins are uniform over the valid range and
    each flip is applied independently with probability 1/2.
    """
    if size % 8 != 0:
        raise ValueError(f"patch size must be divisible by 8, got {size}")
    for i, img in enumerate(images):
        if img.width < size or img.height < size:
            raise ValueError(
                f"image {i} is {img.width}x{img.height}, smaller than patch size {size}"
            )
    rng = np.random.default_rng(seed)
    patches = []
    for _ in range(count):
        idx = int(rng.integers(len(images)))
        img = images[idx]
        ox = int(rng.integers(img.width - size + 1))
        oy = int(rng.integers(img.height - size + 1))
        flip_h = bool(rng.integers(2))
        flip_v = bool(rng.integers(2))
        crop = img.planes[:, oy : oy + size, ox : ox + size]
        if flip_h:
            crop = crop[:, :, ::-1]
        if flip_v:
            crop = crop[:, ::-1, :]
        patches.append(ImagePlanes(crop.copy()))
    return PatchBatch(patches)
