"""Command-line interface: ``orfseg {synth,train,predict,evaluate,relearn}``.

Exit codes: 0 ok, 1 runtime/I-O failure, 2 invalid flags or geometry,
3 empty result (no patch survives the area threshold).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .imagecore import (FormatError, load_image, load_mask, load_samples, read_manifest,
                        save_belief, save_mask, write_manifest)
from .metrics import evaluate
from .orf import OverlappedRegionForecaster
from .patching import DatasetKind, TilingConfig, build_dataset
from .postproc import HoleMode
from .predictor import TrainConfig, load_model, save_model, train
from .preprocess import BinarizeConfig, label_filter
from .relearn import EmptyDatasetError, RelearnConfig, run_pipeline, split_holdout
from .synthgen import SynthConfig, generate_dataset

logger = logging.getLogger("orfseg")

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_EMPTY = 0, 1, 2, 3


class UsageError(Exception):
    """Flag validation failed after parsing."""


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ORF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"ORF_THREADS={env!r} is not an integer")
    return 1


def _minibatch(value: str) -> Optional[int]:
    if value in ("full", "inf", "0"):
        return None
    return int(value)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=20, help="gradient epochs (default: %(default)s)")
    g.add_argument("--lr", type=float, default=0.1, help="learning rate (default: %(default)s)")
    g.add_argument("--minibatch", type=_minibatch, default=4096,
                   help="pixels per step, or 'full' (default: %(default)s)")
    g.add_argument("--l2", type=float, default=1e-4, help="weight decay (default: %(default)s)")
    g.add_argument("--window", type=int, default=5,
                   help="feature window side, odd (default: %(default)s)")
    g.add_argument("--seed", type=int, default=0, help="shuffle seed (default: %(default)s)")


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("label preprocessing")
    g.add_argument("--binarize", choices=["otsu", "fixed", "none"], default="otsu",
                   help="background/pipe mask applied to training labels (default: %(default)s)")
    g.add_argument("--fixed-threshold", type=float, default=0.8,
                   help="brightness cut for --binarize fixed (default: %(default)s)")


def _add_inference_flags(p: argparse.ArgumentParser, stride_flag: str = "--stride") -> None:
    g = p.add_argument_group("inference")
    g.add_argument("--smooth", type=int, default=11,
                   help="mean filter side after stitching (default: %(default)s)")
    g.add_argument("--threshold", type=float, default=0.5,
                   help="belief cut for the final mask (default: %(default)s)")
    g.add_argument("--holes", choices=[m.value for m in HoleMode], default="fill",
                   help="treatment of enclosed negative regions (default: %(default)s)")
    g.add_argument("--min-hole-area", type=int, default=0,
                   help="hole size boundary in pixels (default: %(default)s)")
    g.add_argument("--threads", type=int, default=None,
                   help="patch prediction threads; falls back to $ORF_THREADS (default: 1)")


def _train_config(args) -> TrainConfig:
    return TrainConfig(args.lr, args.epochs, args.minibatch, args.seed, args.l2)


def _binarize_config(args) -> Optional[BinarizeConfig]:
    if args.binarize == "none":
        return None
    return BinarizeConfig(args.binarize, args.fixed_threshold)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orfseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic partially labelled dataset")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--count", type=int, default=40, help="number of images (default: %(default)s)")
    p.add_argument("--size", type=int, default=256, help="image side in pixels (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="dataset seed (default: %(default)s)")
    p.add_argument("--config", type=Path, help="JSON file with SynthConfig fields; flags override")
    p.add_argument("--label-min", type=float, default=0.2,
                   help="minimum annotated fraction of the true area (default: %(default)s)")
    p.add_argument("--label-max", type=float, default=0.7,
                   help="maximum annotated fraction of the true area (default: %(default)s)")
    p.add_argument("--glands-min", type=int, default=0, help="(default: %(default)s)")
    p.add_argument("--glands-max", type=int, default=6, help="(default: %(default)s)")
    p.add_argument("--radius-min", type=int, default=16, help="(default: %(default)s)")
    p.add_argument("--radius-max", type=int, default=44, help="(default: %(default)s)")
    p.add_argument("--pipe-prob", type=float, default=0.5, help="(default: %(default)s)")
    p.add_argument("--noise", type=float, default=0.05, help="pixel noise sigma (default: %(default)s)")

    p = sub.add_parser("train", help="train a patch model on one dataset kind")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--patch", type=int, default=64, help="patch side (default: %(default)s)")
    p.add_argument("--stride", type=int, default=32, help="patch stride (default: %(default)s)")
    p.add_argument("--mode", choices=[k.value for k in DatasetKind], default="mix",
                   help="(default: %(default)s)")
    p.add_argument("--area-threshold", type=float, default=0.5,
                   help="minimum annotated fraction for mix patches (default: %(default)s)")
    p.add_argument("--out", required=True, type=Path, help="model file to write")
    p.add_argument("--init", type=Path, help="model to fine-tune from")
    _add_train_flags(p)
    _add_preprocess_flags(p)

    p = sub.add_parser("predict", help="segment one image with overlapped region forecast")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--patch", type=int, default=64, help="patch side (default: %(default)s)")
    p.add_argument("--stride", type=int, default=16, help="forecast stride (default: %(default)s)")
    p.add_argument("--out", required=True, type=Path, help="mask PNG to write")
    p.add_argument("--belief", type=Path, help="also write the smoothed belief PNG (+ .f32)")
    _add_inference_flags(p)

    p = sub.add_parser("evaluate", help="score predicted masks against ground truth")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--pred-dir", required=True, type=Path, help="directory of <id>.png masks")
    p.add_argument("--report", type=Path, help="JSON report to write")

    p = sub.add_parser("relearn", help="run the full reiterative learning pipeline")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--eval-manifest", type=Path,
                   help="held-out entries with truth; default: every --eval-every'th entry")
    p.add_argument("--eval-every", type=int, default=4, help="(default: %(default)s)")
    p.add_argument("--reviews", type=int, default=2, help="(default: %(default)s)")
    p.add_argument("--confidence", type=float, default=0.7,
                   help="belief needed to add a pixel to the labels (default: %(default)s)")
    p.add_argument("--area-threshold", type=float, default=0.5, help="(default: %(default)s)")
    p.add_argument("--threshold-label-source", choices=["enhanced", "original"],
                   default="enhanced", help="labels the mix threshold is measured on "
                   "(default: %(default)s)")
    p.add_argument("--patch", type=int, default=64, help="(default: %(default)s)")
    p.add_argument("--stride", type=int, default=32, help="training stride (default: %(default)s)")
    p.add_argument("--eval-stride", type=int, default=16,
                   help="forecast stride for annotation and evaluation (default: %(default)s)")
    p.add_argument("--record-timing", action="store_true",
                   help="store seconds_per_image in history.json (makes it non-reproducible)")
    p.add_argument("--out", required=True, type=Path)
    _add_train_flags(p)
    _add_preprocess_flags(p)
    _add_inference_flags(p)
    return parser


def cmd_synth(args) -> int:
    base = SynthConfig.from_json(args.config).to_dict() if args.config else {}
    base.update(
        image_size=args.size, seed=args.seed,
        label_fraction_range=(args.label_min, args.label_max),
        gland_count_range=(args.glands_min, args.glands_max),
        gland_radius_range=(args.radius_min, args.radius_max),
        pipe_probability=args.pipe_prob, noise_sigma=args.noise,
    )
    if args.count < 0:
        raise UsageError("--count must be nonnegative")
    try:
        config = SynthConfig(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))
    print(generate_dataset(config, args.count, args.out))
    return EXIT_OK


def _load_manifest_samples(path: Path):
    return load_samples(read_manifest(path))


def cmd_train(args) -> int:
    samples = _load_manifest_samples(args.manifest)
    if not samples:
        raise EmptyDatasetError("manifest is empty")
    try:
        tiling = TilingConfig(samples[0].image.shape[0], args.patch, args.stride)
        config = _train_config(args)
        bconf = _binarize_config(args)
    except ValueError as exc:
        raise UsageError(str(exc))
    init = load_model(args.init) if args.init else None
    if init is not None and args.epochs == 0:
        save_model(init, args.out)
        print("final loss: n/a (0 epochs)")
        return EXIT_OK
    filt = label_filter(bconf) if bconf is not None else None
    dataset = build_dataset(samples, tiling, args.mode, args.area_threshold, label_filter=filt)
    if not len(dataset):
        raise EmptyDatasetError(f"no {args.mode} patches survive area threshold {args.area_threshold}")
    model = train(dataset, config, init=init, window=args.window)
    save_model(model, args.out)
    if model.loss_history_:
        print(f"initial loss: {model.loss_history_[0]:.6f}")
        print(f"final loss: {model.loss_history_[-1]:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    image = load_image(args.image)
    fc = OverlappedRegionForecaster(model, args.patch, args.stride, args.smooth, args.threshold,
                                    args.holes, args.min_hole_area, _threads(args))
    try:
        fc.tiling(image)
        if not (0 < args.threshold < 1):
            raise ValueError("--threshold must lie in (0, 1)")
        if args.smooth < 1 or args.smooth % 2 == 0:
            raise ValueError("--smooth must be odd and >= 1")
    except ValueError as exc:
        raise UsageError(str(exc))
    belief = fc.predict_proba(image)
    from .orf import binarize
    from .postproc import flood_fill_holes
    mask = flood_fill_holes(binarize(belief, args.threshold), args.holes, args.min_hole_area)
    save_mask(mask, args.out)
    if args.belief:
        save_belief(belief, args.belief)
    print(args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    entries = read_manifest(args.manifest)
    ids, truths, preds = [], {}, {}
    for e in entries:
        if e.truth_path is None:
            raise UsageError(f"entry {e.id!r} has no truth_path")
        path = args.pred_dir / f"{e.id}.png"
        if not path.is_file():
            raise FileNotFoundError(f"missing prediction for {e.id!r}: {path}")
        ids.append(e.id)
        truths[e.id] = load_mask(e.truth_path)
        preds[e.id] = load_mask(path)
    report = evaluate(ids, truths, preds)
    print(report.table())
    if args.report:
        report.to_json(args.report)
    return EXIT_OK


def cmd_relearn(args) -> int:
    entries = read_manifest(args.manifest)
    samples = load_samples(entries)
    if not samples:
        raise EmptyDatasetError("manifest is empty")
    try:
        config = RelearnConfig(
            tiling=TilingConfig(samples[0].image.shape[0], args.patch, args.stride),
            eval_stride=args.eval_stride, confidence=args.confidence, reviews=args.reviews,
            area_threshold=args.area_threshold, train=_train_config(args), window=args.window,
            smooth_kernel=args.smooth, binarize_threshold=args.threshold, hole_mode=args.holes,
            min_hole_area=args.min_hole_area, background=_binarize_config(args),
            threshold_label_source=args.threshold_label_source,
            record_timing=args.record_timing, threads=_threads(args),
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    if args.eval_manifest:
        eval_entries = read_manifest(args.eval_manifest)
        train_samples, eval_samples = samples, load_samples(eval_entries)
    else:
        if args.eval_every < 2:
            raise UsageError("--eval-every must be >= 2")
        by_id = {e.id: e for e in entries}
        train_samples, eval_samples = split_holdout(samples, args.eval_every)
        eval_entries = [by_id[s.id] for s in eval_samples]
    if not eval_samples or any(s.truth is None for s in eval_samples):
        raise UsageError("evaluation entries need truth_path")
    args.out.mkdir(parents=True, exist_ok=True)
    result = run_pipeline(train_samples, eval_samples, config, out_dir=args.out)
    write_manifest(eval_entries, args.out / "eval_manifest.jsonl")
    for rec in result.history:
        r = rec.report
        print(f"review {rec.review}: precision {r.mean_precision:.4f} recall {r.mean_recall:.4f} "
              f"accuracy {r.mean_accuracy:.4f} iou {r.mean_iou:.4f}")
    print(args.out / "history.json")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "relearn": cmd_relearn,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"orfseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EmptyDatasetError as exc:
        print(f"orfseg {args.command}: empty result: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (OSError, FormatError) as exc:
        print(f"orfseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
