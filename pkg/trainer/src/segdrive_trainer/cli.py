"""Command-line entry point: training, one-shot translation, the path-stream
subprocess mode, and checkpoint evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
from PIL import Image

from .data import PairedDataset, colorize
from .train import (
    CANONICAL_MODES,
    DISC_MODES,
    TrainConfig,
    evaluate_holdout,
    randomization_agreement,
    train,
)
from .translate import load_checkpoint, run_stream, translate


def cmd_train(args) -> int:
    cfg = TrainConfig(
        data_dirs=tuple(args.data),
        out_dir=args.out,
        epochs=args.epochs,
        batch_size=args.batch_size,
        image_size=args.image_size,
        base_channels=args.base_channels,
        depth=not args.no_depth,
        disc_mode=args.disc_mode,
        canonical=args.canonical,
        lambda_x=args.lambda_x,
        lambda_d=args.lambda_d,
        lambda_gan=args.lambda_gan,
        lr_g=args.lr_g,
        lr_d=args.lr_d,
        disc_period=args.disc_period,
        disc_skip_threshold=args.disc_skip_threshold,
        holdout_frac=args.holdout_frac,
        seed=args.seed,
        max_range=args.max_range,
    )
    ckpt, curves = train(cfg)
    last = curves[-1]
    print(f"wrote {ckpt}")
    print(f"epoch {last['epoch']}: holdout_acc={last['holdout_acc']:.4f} "
          f"holdout_depth_l1={last['holdout_depth_l1']:.4f}")
    return 0


def cmd_translate(args) -> int:
    model, blob = load_checkpoint(args.checkpoint)
    max_range = blob["norm"]["max_range"]
    out_dir = args.out
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for path in args.images:
        rgb = np.asarray(Image.open(path).convert("RGB"))
        class_map, depth = translate(model, rgb, max_range=max_range)
        stem = os.path.splitext(os.path.basename(path))[0]
        target_dir = out_dir or os.path.dirname(path) or "."
        out_path = os.path.join(target_dir, f"{stem}_seg.png")
        Image.fromarray(class_map, mode="L").save(out_path)
        written = [out_path]
        if args.color:
            color_path = os.path.join(target_dir, f"{stem}_seg_color.png")
            Image.fromarray(colorize(class_map)).save(color_path)
            written.append(color_path)
        if args.save_depth and depth is not None:
            depth_path = os.path.join(target_dir, f"{stem}_depth.f32")
            depth.astype("<f4").tofile(depth_path)
            written.append(depth_path)
        print(" ".join(written))
    return 0


def cmd_translate_stream(args) -> int:
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    run_stream(args.checkpoint, out_dir=args.out)
    return 0


def cmd_eval(args) -> int:
    model, blob = load_checkpoint(args.checkpoint)
    max_range = blob["norm"]["max_range"]
    dataset = PairedDataset(tuple(args.data), max_range=max_range)
    if args.holdout_frac > 0:
        _, indices = dataset.split_by_group(args.holdout_frac, args.seed)
    else:
        indices = list(range(len(dataset)))
    acc, depth_l1 = evaluate_holdout(model, dataset, indices)
    agree = randomization_agreement(model, dataset, indices, max_range)
    print(f"pairs={len(indices)} pixel_acc={acc:.4f} depth_l1={depth_l1:.4f} "
          f"randomization_agreement={agree:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segdrive-trainer",
        description="train and run RGB -> class-map translators on paired datasets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a translator on paired image dirs")
    p.add_argument("--data", action="append", required=True,
                   help="paired dataset directory (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--no-depth", action="store_true",
                   help="drop the auxiliary depth output channel")
    p.add_argument("--disc-mode", choices=DISC_MODES, default="feature-pair")
    p.add_argument("--canonical", choices=CANONICAL_MODES, default="segmentation")
    p.add_argument("--lambda-x", type=float, default=1.0)
    p.add_argument("--lambda-d", type=float, default=10.0)
    p.add_argument("--lambda-gan", type=float, default=1.0)
    p.add_argument("--lr-g", type=float, default=2e-4)
    p.add_argument("--lr-d", type=float, default=5e-5)
    p.add_argument("--disc-period", type=int, default=8)
    p.add_argument("--disc-skip-threshold", type=float, default=0.3)
    p.add_argument("--holdout-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-range", type=float, default=None,
                   help="depth normalization range; default from collect-pairs.cfg")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate RGB PNGs to class-map PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="output dir; default next to input")
    p.add_argument("--color", action="store_true",
                   help="also write a palette-colorized preview")
    p.add_argument("--save-depth", action="store_true",
                   help="also write predicted depth as little-endian float32")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("translate-stream",
                       help="read PNG paths on stdin, answer class-map PNG paths "
                            "on stdout, one line per request")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="output dir; default next to input")
    p.set_defaults(func=cmd_translate_stream)

    p = sub.add_parser("eval", help="score a checkpoint on a paired dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--holdout-frac", type=float, default=0.0,
                   help="evaluate only the held-out group split (0 = all pairs)")
    p.add_argument("--seed", type=int, default=0,
                   help="split seed; match the training run to reuse its holdout")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
