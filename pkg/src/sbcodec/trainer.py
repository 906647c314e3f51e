"""End-to-end rate-distortion training at desk scale.

The encoder/decoder pair is deliberately tiny: one affine+logistic layer
per direction over 8x8 patches (192 YUV values <-> C feature samples per
block). It preserves the pipeline's shape contract (8x downsampling,
features in (0, 1)) and exercises every gradient path: distortion flows
through soft-dequantized features, rate flows through the probability
regressor, and both meet at the soft-bit Jacobian.

Training alternates two phases: refitting the regressor to context
statistics of recently quantized features, and Adam steps on

    lambda * (estimated bits / patch pixels) + distortion

where distortion is the 4:1:1-weighted YUV MSE. All randomness derives
from a single seed; a run is a pure function of (dataset, config, seed).
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .entropy_codec import actual_bpp, encode
from .imageio import ImagePlanes, PatchBatch, sample_patches
from .metrics import psnr
from .quantizer import FEATURE_MAX, QuantizerConfig, dequantize, quantize
from .rate_model import (
    ContextStats,
    RegressorParams,
    assign_contexts,
    collect_stats,
    fit_regressor,
)
from .softbits import SoftBitConfig, soft_bits_with_grad, soft_dequantize

__all__ = [
    "ToyModelParams",
    "TrainConfig",
    "StepMetrics",
    "TrainReport",
    "AdamState",
    "TrainingDiverged",
    "init_params",
    "toy_encode",
    "toy_decode",
    "distortion_loss",
    "train_step",
    "train",
    "evaluate_model",
    "save_model",
    "load_model",
    "ModelFile",
    "write_report_csv",
]

BLOCK = 8
BLOCK_VALUES = BLOCK * BLOCK * 3  # 192 YUV samples per block

# Distortion weights: Y errors count 4x the chroma errors.
_PLANE_WEIGHTS = np.array([4.0, 1.0, 1.0])
_WEIGHT_NORM = 6.0

_MODEL_MAGIC = b"SBM1"
_MODEL_VERSION = 1

_HELDOUT_PATCHES = 16


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite objective."""


@dataclass
class ToyModelParams:
    """Affine encoder/decoder weights over 8x8 blocks."""

    enc_w: np.ndarray  # (C, 192)
    enc_b: np.ndarray  # (C,)
    dec_w: np.ndarray  # (192, C)
    dec_b: np.ndarray  # (192,)

    def __post_init__(self) -> None:
        self.enc_w = np.ascontiguousarray(self.enc_w, dtype=np.float64)
        self.enc_b = np.ascontiguousarray(self.enc_b, dtype=np.float64)
        self.dec_w = np.ascontiguousarray(self.dec_w, dtype=np.float64)
        self.dec_b = np.ascontiguousarray(self.dec_b, dtype=np.float64)
        c = self.enc_w.shape[0]
        if not 1 <= c <= 64:
            raise ValueError(f"channel count {c} out of range [1, 64]")
        if (
            self.enc_w.shape != (c, BLOCK_VALUES)
            or self.enc_b.shape != (c,)
            or self.dec_w.shape != (BLOCK_VALUES, c)
            or self.dec_b.shape != (BLOCK_VALUES,)
        ):
            raise ValueError("parameter shapes are inconsistent")
        for a in (self.enc_w, self.enc_b, self.dec_w, self.dec_b):
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters must be finite")

    @property
    def channels(self) -> int:
        return self.enc_w.shape[0]

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(
            self.enc_w.copy(), self.enc_b.copy(), self.dec_w.copy(), self.dec_b.copy()
        )


@dataclass
class TrainConfig:
    lam: float = 1e-2
    alpha: float = 50.0
    b: int = 4
    channels: int = 8
    batch_size: int = 8
    learning_rate: float = 1e-4
    steps: int = 2000
    refit_interval: int = 100
    seed: int = 0
    patch_size: int = 128

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.refit_interval < 2:
            raise ValueError("refit interval must be at least 2")
        if self.patch_size % BLOCK:
            raise ValueError(f"patch size must be divisible by {BLOCK}")

    @property
    def softbit_config(self) -> SoftBitConfig:
        return SoftBitConfig(b=self.b, alpha=self.alpha)

    @property
    def quantizer_config(self) -> QuantizerConfig:
        return QuantizerConfig(b=self.b)


@dataclass
class StepMetrics:
    step: int
    distortion: float
    rate_bits: float  # estimated bits per patch, batch mean
    objective: float


@dataclass
class TrainReport:
    rows: list[StepMetrics] = field(default_factory=list)
    final_bpp: float = 0.0
    final_distortion: float = 0.0
    final_psnr: float = 0.0


def _to_blocks(x: np.ndarray) -> np.ndarray:
    """(N, 3, H, W) -> (N, H/8, W/8, 192), block-major then plane/dy/dx."""
    n, p, h, w = x.shape
    return (
        x.reshape(n, 3, h // BLOCK, BLOCK, w // BLOCK, BLOCK)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(n, h // BLOCK, w // BLOCK, BLOCK_VALUES)
    )


def _from_blocks(v: np.ndarray, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`_to_blocks`."""
    n = v.shape[0]
    return (
        v.reshape(n, h // BLOCK, w // BLOCK, 3, BLOCK, BLOCK)
        .transpose(0, 3, 1, 4, 2, 5)
        .reshape(n, 3, h, w)
    )


def init_params(channels: int, rng: np.random.Generator) -> ToyModelParams:
    """Weights uniform in [-0.05, 0.05], biases zero."""
    return ToyModelParams(
        enc_w=rng.uniform(-0.05, 0.05, size=(channels, BLOCK_VALUES)),
        enc_b=np.zeros(channels),
        dec_w=rng.uniform(-0.05, 0.05, size=(BLOCK_VALUES, channels)),
        dec_b=np.zeros(BLOCK_VALUES),
    )


def toy_encode(patch: ImagePlanes, params: ToyModelParams) -> np.ndarray:
    """Features (H/8, W/8, C) in (0, 1), clamped for quantization."""
    if patch.height % BLOCK or patch.width % BLOCK:
        raise ValueError(
            f"patch dimensions {patch.width}x{patch.height} not divisible by {BLOCK}"
        )
    v = _to_blocks(patch.planes[None])
    f = expit(v @ params.enc_w.T + params.enc_b)
    return np.minimum(f[0], FEATURE_MAX)


def toy_decode(f_hat: np.ndarray, params: ToyModelParams) -> ImagePlanes:
    """Affine reconstruction of the patch; not clamped (loss-path output)."""
    f_hat = np.asarray(f_hat, dtype=np.float64)
    vhat = f_hat[None] @ params.dec_w.T + params.dec_b
    h = f_hat.shape[0] * BLOCK
    w = f_hat.shape[1] * BLOCK
    return ImagePlanes(_from_blocks(vhat, h, w)[0])


def distortion_loss(x: ImagePlanes, x_hat: ImagePlanes) -> float:
    """(4 * MSE_Y + MSE_U + MSE_V) / 6 on the [0, 1] scale."""
    if x.planes.shape != x_hat.planes.shape:
        raise ValueError(
            f"shape mismatch {x.planes.shape} vs {x_hat.planes.shape}"
        )
    per_plane = np.mean((x.planes - x_hat.planes) ** 2, axis=(1, 2))
    return float((_PLANE_WEIGHTS * per_plane).sum() / _WEIGHT_NORM)


class AdamState:
    """Adam moments for the four parameter arrays."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: ToyModelParams):
        self.t = 0
        self.m = {k: np.zeros_like(getattr(params, k)) for k in _PARAM_KEYS}
        self.v = {k: np.zeros_like(getattr(params, k)) for k in _PARAM_KEYS}

    def step(self, params: ToyModelParams, grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        bc1 = 1.0 - self.BETA1**self.t
        bc2 = 1.0 - self.BETA2**self.t
        for k in _PARAM_KEYS:
            g = grads[k]
            self.m[k] = self.BETA1 * self.m[k] + (1.0 - self.BETA1) * g
            self.v[k] = self.BETA2 * self.v[k] + (1.0 - self.BETA2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.EPS)
            getattr(params, k)[...] -= lr * update


_PARAM_KEYS = ("enc_w", "enc_b", "dec_w", "dec_b")


def _forward_backward(
    x: np.ndarray,
    params: ToyModelParams,
    reg: RegressorParams,
    cfg: TrainConfig,
    want_grads: bool = True,
):
    """Shared forward/backward pass over a stacked batch (N, 3, S, S).

    Returns (distortion, mean rate bits, objective, grads, batch stats).
    """
    n, _, s, _ = x.shape
    pixels = s * s
    sb_cfg = cfg.softbit_config
    q_cfg = cfg.quantizer_config

    v = _to_blocks(x)
    z = v @ params.enc_w.T + params.enc_b
    f_raw = expit(z)
    f = np.minimum(f_raw, FEATURE_MAX)

    soft, jac = soft_bits_with_grad(f, sb_cfg, want_grad=want_grads)
    f_soft = soft_dequantize(soft)

    vhat = f_soft @ params.dec_w.T + params.dec_b
    xhat = _from_blocks(vhat, s, s)

    diff = xhat - x
    per_plane_mse = np.mean(diff**2, axis=(0, 2, 3))
    distortion = float((_PLANE_WEIGHTS * per_plane_mse).sum() / _WEIGHT_NORM)

    # Hard-bit side: contexts are constants of the gradient.
    stats = ContextStats.empty()
    ctx = np.empty(f.shape + (cfg.b,), dtype=np.uint8)
    for i in range(n):
        qi = quantize(f[i], q_cfg)
        ctx[i] = assign_contexts(qi)
        stats.add(collect_stats(qi))

    pi = reg.pi[ctx]
    p = soft * pi + (1.0 - soft) * (1.0 - pi)
    total_bits = float(-np.log2(p).sum())
    rate_bits = total_bits / n
    objective = cfg.lam * rate_bits / pixels + distortion
    if not np.isfinite(objective):
        raise TrainingDiverged(
            f"non-finite objective (distortion={distortion}, rate={rate_bits})"
        )

    if not want_grads:
        return distortion, rate_bits, objective, None, stats

    # Distortion branch.
    dxhat = (2.0 / (n * _WEIGHT_NORM * pixels)) * (
        _PLANE_WEIGHTS[None, :, None, None] * diff
    )
    dvhat = _to_blocks(dxhat)
    ddec_w = np.einsum("nhwo,nhwc->oc", dvhat, f_soft)
    ddec_b = dvhat.sum(axis=(0, 1, 2))
    df_soft = dvhat @ params.dec_w

    # Rate branch, scaled by lambda and the bpp normalization.
    ln2 = np.log(2.0)
    dsoft_rate = -(2.0 * pi - 1.0) / (p * ln2) * (cfg.lam / (n * pixels))

    weights = 2.0 ** -(np.arange(cfg.b) + 1.0)
    dsoft = df_soft[..., None] * weights + dsoft_rate
    df = (dsoft * jac).sum(axis=-1)
    df[f_raw > FEATURE_MAX] = 0.0
    dz = df * f_raw * (1.0 - f_raw)
    denc_w = np.einsum("nhwc,nhwo->co", dz, v)
    denc_b = dz.sum(axis=(0, 1, 2))

    grads = {"enc_w": denc_w, "enc_b": denc_b, "dec_w": ddec_w, "dec_b": ddec_b}
    return distortion, rate_bits, objective, grads, stats


def train_step(
    batch: PatchBatch,
    params: ToyModelParams,
    reg: RegressorParams,
    cfg: TrainConfig,
    adam: AdamState,
    step: int = 0,
) -> tuple[StepMetrics, ContextStats]:
    """One Adam update on the rate-distortion objective; mutates params."""
    x = np.stack([p.planes for p in batch])
    distortion, rate_bits, objective, grads, stats = _forward_backward(
        x, params, reg, cfg
    )
    adam.step(params, grads, cfg.learning_rate)
    return StepMetrics(step, distortion, rate_bits, objective), stats


def train(
    images: list[ImagePlanes], cfg: TrainConfig
) -> tuple[ToyModelParams, RegressorParams, TrainReport]:
    """Two-phase alternating training over a small dataset.

    At steps that are multiples of ``refit_interval``, the regressor is
    refitted to context statistics pooled over the batches seen since the
    previous refit (the first refit bootstraps from one freshly drawn
    batch); every other step is an Adam update. Deterministic in
    ``cfg.seed``.
    """
    if not images:
        raise ValueError("training dataset is empty")
    master = np.random.default_rng(cfg.seed)
    params = init_params(cfg.channels, master)
    heldout_seed = int(master.integers(2**63))
    step_seeds = [int(master.integers(2**63)) for _ in range(cfg.steps)]

    reg = RegressorParams.uniform()
    window: deque[ContextStats] = deque(maxlen=cfg.refit_interval)
    adam = AdamState(params)
    report = TrainReport()

    for step in range(cfg.steps):
        if step % cfg.refit_interval == 0:
            if not window:
                boot = sample_patches(
                    images, cfg.patch_size, cfg.batch_size, step_seeds[step]
                )
                x = np.stack([p.planes for p in boot])
                _, _, _, _, stats = _forward_backward(
                    x, params, reg, cfg, want_grads=False
                )
                window.append(stats)
            merged = ContextStats.empty()
            for s in window:
                merged.add(s)
            reg = fit_regressor(merged)
        else:
            batch = sample_patches(
                images, cfg.patch_size, cfg.batch_size, step_seeds[step]
            )
            metrics, stats = train_step(batch, params, reg, cfg, adam, step)
            window.append(stats)
            report.rows.append(metrics)

    heldout = sample_patches(images, cfg.patch_size, _HELDOUT_PATCHES, heldout_seed)
    report.final_bpp, report.final_distortion, report.final_psnr = evaluate_model(
        heldout, params, cfg
    )
    return params, reg, report


def evaluate_model(
    patches: PatchBatch, params: ToyModelParams, cfg: TrainConfig
) -> tuple[float, float, float]:
    """Test-mode metrics: mean actual bpp, weighted YUV MSE, and PSNR.

    Uses the hard quantization path end to end (quantize, entropy-code,
    dequantize, decode); reconstructions are clamped to [0, 1] for PSNR.
    """
    q_cfg = cfg.quantizer_config
    bpps, mses, psnrs = [], [], []
    for patch in patches:
        f = toy_encode(patch, params)
        q = quantize(f, q_cfg)
        bs = encode(q, orig_size=(patch.width, patch.height))
        bpps.append(actual_bpp(bs))
        recon = toy_decode(dequantize(q), params)
        mses.append(distortion_loss(patch, recon))
        clipped = np.clip(recon.planes, 0.0, 1.0)
        psnrs.append(
            np.mean([psnr(patch.planes[p], clipped[p]) for p in range(3)])
        )
    return float(np.mean(bpps)), float(np.mean(mses)), float(np.mean(psnrs))


@dataclass
class ModelFile:
    """Deserialized model file: toy weights plus codec configuration."""

    params: ToyModelParams
    b: int
    alpha: float


def save_model(params: ToyModelParams, b: int, alpha: float, path) -> None:
    """Serialize weights and codec config (magic SBM1, little-endian f64)."""
    if not 1 <= b <= 16:
        raise ValueError(f"bit depth {b} out of range")
    c = params.channels
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sBBHd", _MODEL_MAGIC, _MODEL_VERSION, b, c, alpha))
        for key in _PARAM_KEYS:
            fh.write(getattr(params, key).astype("<f8").tobytes())


def load_model(path) -> ModelFile:
    """Read a model file written by :func:`save_model`."""
    with open(path, "rb") as fh:
        data = fh.read()
    head = struct.calcsize("<4sBBHd")
    if len(data) < head or data[:4] != _MODEL_MAGIC:
        raise ValueError(f"not a model file: {path}")
    _, version, b, c, alpha = struct.unpack("<4sBBHd", data[:head])
    if version != _MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    shapes = {
        "enc_w": (c, BLOCK_VALUES),
        "enc_b": (c,),
        "dec_w": (BLOCK_VALUES, c),
        "dec_b": (BLOCK_VALUES,),
    }
    need = head + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(data) != need:
        raise ValueError(f"model file has {len(data)} bytes, expected {need}")
    pos = head
    arrays = {}
    for key, shape in shapes.items():
        count = int(np.prod(shape))
        arrays[key] = np.frombuffer(
            data[pos : pos + 8 * count], dtype="<f8"
        ).reshape(shape).copy()
        pos += 8 * count
    return ModelFile(ToyModelParams(**arrays), b, float(alpha))


def write_report_csv(report: TrainReport, path) -> None:
    """Per-step CSV: step, distortion, estimated rate (bits), objective."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("step,distortion,rate_bits,objective\n")
        for row in report.rows:
            fh.write(
                f"{row.step},{row.distortion:.12g},{row.rate_bits:.12g},"
                f"{row.objective:.12g}\n"
            )
