"""Soft-bit image compression toolkit.

A lossy image/tensor compression pipeline built from a power-of-two
uniform quantizer, a differentiable soft-bit surrogate for the hard
quantization bits, context-adaptive bitplane arithmetic coding, a
differentiable rate estimator, and a small end-to-end rate-distortion
trainer with PSNR/MS-SSIM evaluation.
"""

from .entropy_codec import (
    BinaryContextModel,
    Bitstream,
    ContextId,
    RangeDecoder,
    RangeEncoder,
    actual_bpp,
    decode,
    encode,
    refinement_context,
    significance_context,
    trace_bits,
)
from .imageio import (
    ImagePlanes,
    PatchBatch,
    RgbImage,
    load_ppm,
    pad_to_multiple,
    rgb_to_yuv,
    sample_patches,
    save_pgm,
    save_ppm,
    yuv_to_rgb,
)
from .metrics import QualityScore, dataset_summary, msssim, psnr
from .quantizer import (
    FEATURE_MAX,
    QuantIndices,
    QuantizerConfig,
    dequantize,
    hard_bit,
    hard_bits,
    quantize,
)
from .rate_model import (
    ContextStats,
    RateLoss,
    RegressorParams,
    assign_contexts,
    collect_stats,
    estimated_bpp,
    fit_regressor,
    rate_loss,
    regressor_prob,
)
from .softbits import (
    SoftBitConfig,
    sigmoid,
    soft_bits,
    soft_bits_grad,
    soft_bits_with_grad,
    soft_dequantize,
)
from .trainer import (
    ToyModelParams,
    TrainConfig,
    TrainReport,
    distortion_loss,
    load_model,
    save_model,
    toy_decode,
    toy_encode,
    train,
    train_step,
)

__version__ = "0.1.0"
