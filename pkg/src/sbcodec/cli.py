"""Command-line front end: encode, decode, eval, train, inspect.

Output files are written to a temporary sibling and renamed on success,
so failures never leave partial artifacts behind. Status lines use the
stable ``key=value`` form; tabular output is CSV on stdout.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import entropy_codec, imageio, metrics, trainer
from .quantizer import QuantizerConfig, dequantize, quantize

__all__ = ["main", "build_parser"]


def _write_atomic(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _save_ppm_atomic(img: imageio.RgbImage, path) -> None:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    _write_atomic(path, header + img.pixels.tobytes())


def _channels_for_target(target_bpp: float) -> int:
    """Feature-map count from a target rate: 4 below 0.25 bpp, 8 up to 0.5, 16 above."""
    if target_bpp < 0.25:
        return 4
    if target_bpp <= 0.5:
        return 8
    return 16


def cmd_encode(args) -> int:
    model = trainer.load_model(args.model)
    img = imageio.load_ppm(args.input)
    planes = imageio.pad_to_multiple(imageio.rgb_to_yuv(img), trainer.BLOCK)
    features = trainer.toy_encode(planes, model.params)
    q = quantize(features, QuantizerConfig(model.b))
    bs = entropy_codec.encode(q, orig_size=(img.width, img.height))
    _write_atomic(args.out, bs.to_bytes())
    print(f"bpp={entropy_codec.actual_bpp(bs):.6f}")
    return 0


def cmd_decode(args) -> int:
    model = trainer.load_model(args.model)
    with open(args.input, "rb") as fh:
        bs = entropy_codec.Bitstream.from_bytes(fh.read())
    if bs.b != model.b:
        raise ValueError(
            f"bitstream bit depth {bs.b} does not match model bit depth {model.b}"
        )
    q = entropy_codec.decode(bs)
    recon = trainer.toy_decode(dequantize(q), model.params)
    cropped = imageio.ImagePlanes(
        np.clip(recon.planes[:, : bs.orig_height, : bs.orig_width], 0.0, 1.0)
    )
    _save_ppm_atomic(imageio.yuv_to_rgb(cropped), args.out)
    return 0


def _eval_pairs(args) -> list[tuple[str, Path, Path]]:
    orig, recon = Path(args.original), Path(args.reconstruction)
    if orig.is_dir() != recon.is_dir():
        raise ValueError("original and reconstruction must both be files or both dirs")
    if not orig.is_dir():
        return [(orig.name, orig, recon)]
    pairs = []
    for path in sorted(orig.glob("*.ppm")):
        other = recon / path.name
        if other.exists():
            pairs.append((path.name, path, other))
    if not pairs:
        raise ValueError(f"no pairs found under {orig} and {recon}")
    return pairs


def cmd_eval(args) -> int:
    rows = []
    summaries = []
    for name, orig_path, recon_path in _eval_pairs(args):
        orig = imageio.rgb_to_yuv(imageio.load_ppm(orig_path))
        recon = imageio.rgb_to_yuv(imageio.load_ppm(recon_path))
        bpp = 0.0
        if args.sbc:
            sbc = Path(args.sbc)
            if sbc.is_dir():
                sbc = sbc / (Path(name).stem + ".sbc")
            if sbc.exists():
                with open(sbc, "rb") as fh:
                    bpp = entropy_codec.actual_bpp(
                        entropy_codec.Bitstream.from_bytes(fh.read())
                    )
        summary = metrics.dataset_summary([(orig, recon, bpp)])
        summaries.append((orig, recon, bpp))
        rows.append((name, bpp, summary.psnr_avg, summary.msssim_avg))

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["name", "bpp", "psnr_avg", "msssim_avg"])
    for name, bpp, p, m in rows:
        writer.writerow([name, f"{bpp:.6f}", f"{p:.4f}", f"{m:.6f}"])
    if len(rows) > 1:
        agg = metrics.dataset_summary(summaries)
        writer.writerow(
            ["average", f"{agg.bpp:.6f}", f"{agg.psnr_avg:.4f}", f"{agg.msssim_avg:.6f}"]
        )
    return 0


def cmd_train(args) -> int:
    dataset_dir = Path(args.dataset)
    paths = sorted(dataset_dir.glob("*.ppm"))
    if not paths:
        raise ValueError(f"no .ppm images under {dataset_dir}")
    images = [imageio.rgb_to_yuv(imageio.load_ppm(p)) for p in paths]

    channels = args.channels
    if channels is None:
        channels = (
            _channels_for_target(args.target_bpp) if args.target_bpp is not None else 8
        )
    cfg = trainer.TrainConfig(
        lam=args.lam,
        alpha=args.alpha,
        b=args.bits,
        channels=channels,
        batch_size=args.batch,
        learning_rate=args.lr,
        steps=args.steps,
        refit_interval=args.refit_interval,
        seed=args.seed,
        patch_size=args.patch_size,
    )
    params, reg, report = trainer.train(images, cfg)

    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    try:
        trainer.save_model(params, cfg.b, cfg.alpha, tmp)
        os.replace(tmp, out)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise

    if args.report:
        trainer.write_report_csv(report, args.report)
    if args.regressor_out:
        from .rate_model import save_regressor

        save_regressor(reg, args.regressor_out)
    print(f"final_bpp={report.final_bpp:.6f}")
    print(f"final_distortion={report.final_distortion:.8f}")
    print(f"final_psnr={report.final_psnr:.4f}")
    return 0


def cmd_inspect(args) -> int:
    with open(args.input, "rb") as fh:
        bs = entropy_codec.Bitstream.from_bytes(fh.read())
    q = entropy_codec.decode(bs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for c in range(q.channels):
        for k in range(q.b):
            plane = ((q.indices[:, :, c] >> (q.b - 1 - k)) & 1).astype(np.uint8) * 255
            imageio.save_pgm(plane, out_dir / f"map{c}_plane{k}.pgm")
    print(f"planes={q.channels * q.b}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbcodec",
        description="Soft-bit image compression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress a PPM image to a .sbc bitstream")
    p.add_argument("input", help="input PPM (P6) image")
    p.add_argument("--model", required=True, help="trained .sbm model file")
    p.add_argument("--out", required=True, help="output .sbc path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decompress a .sbc bitstream to PPM")
    p.add_argument("input", help="input .sbc bitstream")
    p.add_argument("--model", required=True, help="trained .sbm model file")
    p.add_argument("--out", required=True, help="output PPM path")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="PSNR/MS-SSIM report for image pairs")
    p.add_argument("original", help="original PPM file or directory")
    p.add_argument("reconstruction", help="reconstruction PPM file or directory")
    p.add_argument("--sbc", help="bitstream file or directory for bpp column")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train a model on a directory of PPMs")
    p.add_argument("dataset", help="directory of .ppm training images")
    p.add_argument("--out", required=True, help="output .sbm model path")
    p.add_argument("--report", help="per-step metrics CSV path")
    p.add_argument("--regressor-out", help="optional regressor sidecar path")
    p.add_argument("--bits", type=int, default=4, help="quantizer bit depth")
    p.add_argument("--channels", type=int, default=None, help="feature maps C")
    p.add_argument(
        "--target-bpp",
        type=float,
        default=None,
        help="pick C from a target rate (4/8/16 maps below 0.25 / up to 0.5 / above)",
    )
    p.add_argument("--alpha", type=float, default=50.0, help="soft-bit sharpness")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-2, help="rate weight")
    p.add_argument("--batch", type=int, default=8, help="batch size")
    p.add_argument("--lr", type=float, default=1e-4, help="learning rate")
    p.add_argument("--steps", type=int, default=2000, help="training steps")
    p.add_argument("--refit-interval", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int, default=128)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("inspect", help="dump bitplane images from a bitstream")
    p.add_argument("input", help="input .sbc bitstream")
    p.add_argument("--out", required=True, help="output directory for PGM files")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"sbcodec: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
