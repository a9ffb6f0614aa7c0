"""``mapunetr {synth|train|eval|infer|attn}`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from . import attnmap
from .checkpoint import load_checkpoint
from .config import load_config
from .data import load_dataset, quantize, save_dataset, synth_dataset
from .errors import MapunetrError
from .metrics import evaluate
from .model import predict_mask
from .train import conform, from_checkpoint, prepare_image, thread_limit, train

log = logging.getLogger("mapunetr")


class UsageError(Exception):
    """Bad flag combination discovered after parsing (exit code 2)."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapunetr", description="ViT/U-Net segmentation at desk scale")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{synth,train,eval,infer,attn}")

    def common(p, *flags):
        if "config" in flags:
            p.add_argument("--config", help="JSON run configuration")
        if "data" in flags:
            p.add_argument("--data", required=True, help="dataset directory")
        if "out" in flags:
            p.add_argument("--out", required=True, help="output directory")
        if "ckpt" in flags:
            p.add_argument("--ckpt", required=True, help="checkpoint file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded BLAS; identical runs give identical logs")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    common(p, "out")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--channels", type=int, default=3)

    p = sub.add_parser("train", help="train a model")
    common(p, "config", "data")
    p.add_argument("--out", default="run", help="output directory (default: ./run)")

    p = sub.add_parser("eval", help="print metrics of a checkpoint on a dataset")
    common(p, "data", "ckpt")

    p = sub.add_parser("infer", help="write predicted masks as PGM")
    common(p, "data", "ckpt", "out")

    p = sub.add_parser("attn", help="write attention heat maps (PGM) and overlays (PPM)")
    common(p, "data", "ckpt", "out")
    p.add_argument("--layer", type=int, action="append",
                   help="encoder block to visualize; repeat for several")
    p.add_argument("--method", choices=("single", "rollout"), default=None)
    p.add_argument("--alpha", type=float, default=0.5)
    return parser


# -- commands ------------------------------------------------------------------

def _load_model(args):
    model, run, norm = from_checkpoint(load_checkpoint(args.ckpt))
    samples = conform(load_dataset(args.data), run.model)
    return model, run, norm, samples


def cmd_synth(args) -> int:
    samples = synth_dataset(args.n, args.size, args.seed, channels=args.channels)
    save_dataset(samples, args.out, num_classes=2)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    run = load_config(args.config)
    samples = load_dataset(args.data)
    result = train(run, samples, out_dir=args.out, seed=args.seed, deterministic=args.deterministic)
    last = result.logs[-1]
    print(f"trained {len(result.logs)} epochs: loss={last.loss:.6f} dice_coef={last.dice_coef:.6f} "
          f"best_epoch={result.best_epoch}; outputs in {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, run, norm, samples = _load_model(args)
    with thread_limit(args.deterministic):
        report = evaluate(model, samples, run.schedule.batch_size,
                          transform=lambda im: prepare_image(im, norm, model.dtype))
    print(report.table())
    print(report.line())
    return 0


def cmd_infer(args) -> int:
    model, run, norm, samples = _load_model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with thread_limit(args.deterministic):
        for s in samples:
            probs, _ = model.forward(prepare_image(s.image, norm, model.dtype), mode="infer")
            mask = predict_mask(probs).astype(np.uint8)
            Image.fromarray(mask, mode="L").save(out / f"pred_{s.id}.pgm")
    print(f"wrote {len(samples)} masks to {out}")
    return 0


def cmd_attn(args) -> int:
    model, run, norm, samples = _load_model(args)
    depth = run.model.depth
    if args.method is None and not args.layer:
        raise UsageError("attn needs --layer N (repeatable) or --method rollout")
    if args.method == "rollout" and args.layer:
        raise UsageError("--layer cannot be combined with --method rollout")
    for layer in args.layer or []:
        if not 0 <= layer < depth:
            raise UsageError(f"--layer {layer} out of range: valid layers are 0..{depth - 1}")
    if not 0 <= args.alpha <= 1:
        raise UsageError(f"--alpha must lie in [0, 1], got {args.alpha}")

    jobs = [("rollout", "rollout", -1)] if args.method == "rollout" else \
        [(f"layer{n}", "single", n) for n in args.layer]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hw = run.model.image_size
    written = 0
    with thread_limit(args.deterministic):
        for s in samples:
            _, records = model.forward(prepare_image(s.image, norm, model.dtype), mode="infer")
            for tag, method, layer in jobs:
                smap = attnmap.saliency(records, hw, run.model.patch_size, method, layer)
                Image.fromarray(quantize(smap.values), mode="L").save(out / f"attn_{s.id}_{tag}.pgm")
                rgb = attnmap.overlay(smap, s.image, args.alpha)
                if rgb.shape[-1] == 1:
                    rgb = np.repeat(rgb, 3, axis=-1)
                Image.fromarray(quantize(rgb), mode="RGB").save(out / f"overlay_{s.id}_{tag}.ppm")
                written += 1
    print(f"wrote {written} heat maps and overlays to {out}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "attn": cmd_attn}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mapunetr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except MapunetrError as exc:
        print(f"mapunetr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"mapunetr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
