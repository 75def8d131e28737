"""Command-line entry point: ``contsr train | sample | eval``.

Exit codes: 0 success, 2 usage/config, 3 data, 4 checkpoint.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .data import DataError, load_hr_folder
from .denoiser import Denoiser, output_size
from .imageio import load_image, save_image
from .report import evaluate
from .sampler import VARIANCE_MODES, SamplerConfig, sample
from .trainer import Trainer, load_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4

log = logging.getLogger("contsr")


class UsageError(Exception):
    pass


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    M = cfg.train.max_scale
    hr_size = output_size(cfg.data.lr_size, cfg.data.lr_size, M)[0]
    hr, names = load_hr_folder(cfg.resolve(cfg.data.hr_dir), hr_size)
    out_dir = Path(args.out_dir) if args.out_dir else cfg.resolve(cfg.data.out_dir)
    if args.resume:
        trainer = Trainer.resume(args.resume, hr, out_dir)
    else:
        torch.manual_seed(cfg.train.seed)
        model = Denoiser(cfg.model)
        trainer = Trainer(model, cfg.schedule.build(), cfg.train, hr, cfg.data.lr_size,
                          out_dir, extra_meta={"run_config": cfg.to_dict()})
    log.info("training on %d images (%s) at HR %dx%d", len(names), cfg.resolve(cfg.data.hr_dir),
             hr_size, hr_size)
    trainer.run()
    print(f"final checkpoint: {out_dir / 'final.ckpt'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    if not args.scale > 1.0:
        raise UsageError(f"scale must exceed 1, got {args.scale}")
    model, sched, _ = load_model(args.checkpoint)
    try:
        x_lr = load_image(args.input)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read input image {args.input}: {e}") from e
    cfg = SamplerConfig(variance=args.variance, seed=args.seed)
    sr = sample(x_lr, args.scale, model, sched, cfg)
    save_image(sr, args.output)
    h, w = sr.shape[-2:]
    print(f"{w}x{h}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.scales:
        raise UsageError("at least one scale is required")
    if any(not s > 1.0 for s in args.scales):
        raise UsageError("scales must exceed 1")
    model, sched, meta = load_model(args.checkpoint)
    lr_size = args.lr_size or int(meta.get("lr_size", 16))
    top = max(max(args.scales), model.config.max_scale)
    hr_size = output_size(lr_size, lr_size, top)[0]
    hr, names = load_hr_folder(args.data, hr_size)
    report = evaluate(model, sched, hr, names, args.scales, lr_size, seed=args.seed,
                      metrics=args.metrics, variance=args.variance)
    report.write(args.output)
    for block in report.aggregates():
        vals = "  ".join(f"{m}={block[m]:.4f}" for m in report.metrics)
        print(f"scale {block['scale']:g}: {vals}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contsr",
                                description="Continuous-scale diffusion super-resolution")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("config")
    t.add_argument("--out-dir", help="override data.out_dir")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="super-resolve one image")
    s.add_argument("checkpoint")
    s.add_argument("input")
    s.add_argument("--scale", "-s", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", "-o", required=True)
    s.add_argument("--variance", choices=VARIANCE_MODES, default="beta")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="score a checkpoint on an HR image folder")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("--scales", type=float, nargs="*", default=[])
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--output", "-o", required=True)
    e.add_argument("--lr-size", type=int, default=None)
    e.add_argument("--metrics", nargs="+", choices=("psnr", "ssim", "consistency"),
                   default=["psnr", "ssim", "consistency"])
    e.add_argument("--variance", choices=VARIANCE_MODES, default="beta")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
