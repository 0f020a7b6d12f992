"""Command-line entry point: synthesize data, extract features, train,
evaluate, and emit DET/ROC curves.

Exit codes:
  0  success
  2  bad usage or invalid configuration
  3  manifest / parse errors (ParseError, MissingFile, SingleClassTrainSplit)
  4  filesystem errors
  5  dataset / evaluation errors (EmptySplit, SingleClassDataset, ...)
  6  model / weight-file errors (CorruptFile, ChecksumMismatch, ...)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import data as dat
from . import fusion, metrics
from .errors import (
    BatchTooSmall,
    ChecksumMismatch,
    ConfigMismatch,
    CorruptFile,
    EmptySplit,
    FpadError,
    InvalidConfig,
    IoError,
    MissingFile,
    NoForeground,
    NoLiveSamples,
    NoSpoofSamples,
    NoValidBlocks,
    ParseError,
    ShapeMismatch,
    SingleClassDataset,
    SingleClassTrainSplit,
)
from .lpq import LpqConfig
from .quality import QualityConfig

log = logging.getLogger("fpadfuse")

EXIT_CODES = (
    (2, (InvalidConfig, ValueError)),
    (3, (ParseError, MissingFile, SingleClassTrainSplit)),
    (4, (IoError, OSError)),
    (5, (EmptySplit, SingleClassDataset, NoSpoofSamples, NoLiveSamples,
         NoForeground, NoValidBlocks)),
    (6, (CorruptFile, ChecksumMismatch, ConfigMismatch, ShapeMismatch,
         BatchTooSmall)),
)


def exit_code_for(exc) -> int:
    for code, types in EXIT_CODES:
        if isinstance(exc, types):
            return code
    return 1


def _load_config_file(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad config file: {exc}") from exc


def _merge(defaults: dict, file_cfg: dict, args, keys):
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    merged.update({k: v for k, v in file_cfg.items() if k in keys})
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


RUN_KEYS = ("seed", "epochs", "batch", "lr", "image_side", "branch",
            "threshold", "count", "ridge_width", "width_jitter", "noise_sigma",
            "blur_width")

RUN_DEFAULTS = dict(
    seed=0, epochs=50, batch=16, lr=1e-3, image_side=64, branch="fused",
    threshold=0.5, count=100, ridge_width=5.0, width_jitter=2.0,
    noise_sigma=0.05, blur_width=3,
)


def _run_config(args):
    file_cfg = _load_config_file(args.config) if args.config else {}
    return _merge(RUN_DEFAULTS, file_cfg, args, RUN_KEYS)


def _model_config(run):
    return fusion.DyffpadConfig(image_side=run["image_side"], branch=run["branch"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    run = _run_config(args)
    params = dat.SynthParams(
        side=run["image_side"],
        ridge_width=run["ridge_width"],
        width_jitter=run["width_jitter"],
        noise_sigma=run["noise_sigma"],
        blur_width=run["blur_width"],
        seed=run["seed"],
    )
    try:
        manifest = dat.synth_dataset(run["count"], params, args.out)
    except OSError as exc:
        raise IoError(f"cannot write dataset: {exc}") from exc
    print(f"wrote {len(manifest.entries)} images + manifest to {args.out}")
    return 0


def cmd_extract(args):
    run = _run_config(args)
    qcfg, lcfg = QualityConfig(), LpqConfig()
    manifest = dat.load_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    rows = []
    skipped = 0
    for entry in manifest.entries:
        full = entry.path if os.path.isabs(entry.path) else os.path.join(base, entry.path)
        try:
            img = dat.GrayImage.open(full)
            vec, _ = dat.extract_features(img, qcfg, lcfg)
        except FpadError as exc:
            if args.strict:
                raise
            skipped += 1
            log.warning("skipping %s: %s", entry.path, exc)
            continue
        rows.append((entry.path, vec))
    dat.save_feature_cache(args.out, rows, qcfg, lcfg)
    print(f"extracted {len(rows)} feature rows to {args.out}"
          + (f" ({skipped} skipped)" if skipped else ""))
    return 0


def _load_splits(args, run):
    qcfg, lcfg = QualityConfig(), LpqConfig()
    manifest = dat.load_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    cache = dat.load_feature_cache(args.cache, qcfg, lcfg) if args.cache else None
    return dat.build_split(manifest, base, qcfg, lcfg,
                           image_side=run["image_side"], cache=cache)


def cmd_train(args):
    run = _run_config(args)
    splits = _load_splits(args, run)
    if "train" not in splits:
        raise EmptySplit("manifest has no train split")
    tr = splits["train"]
    model = fusion.build_model(_model_config(run), seed=run["seed"])
    result = fusion.train(
        model,
        (tr.imgs, tr.feats, tr.labels),
        epochs=run["epochs"],
        batch=run["batch"],
        lr=run["lr"],
        seed=run["seed"],
    )
    fusion.save_weights(model, args.weights)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "train_acc", "val_acc"])
            for rec in result.history:
                writer.writerow([rec["epoch"], repr(rec["loss"]),
                                 repr(rec["train_acc"]),
                                 "" if rec["val_acc"] is None else repr(rec["val_acc"])])
    if "test" in splits:
        te = splits["test"]
        scores = fusion.evaluate_scores(model, te.imgs, te.feats)
        acc = fusion.accuracy(scores, te.labels, run["threshold"])
        print(f"test accuracy: {100.0 * acc:.2f}%")
    print(f"saved weights ({model.param_count()} parameters) to {args.weights}")
    return 0


def _scored_samples(model, split):
    scores = fusion.evaluate_scores(model, split.imgs, split.feats)
    return [
        metrics.ScoredSample(score=float(np.clip(s, 0.0, 1.0)),
                             label=metrics.LIVE if y > 0.5 else metrics.SPOOF,
                             material=m)
        for s, y, m in zip(scores, split.labels, split.materials)
    ]


def _write_det_csv(det, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# bpcer_at_apcer1: {det.bpcer_at_apcer1!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["threshold", "apcer", "bpcer"])
        for t, a, b in zip(det.thresholds, det.apcer, det.bpcer):
            writer.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def _write_roc_csv(samples, path):
    fpr, tpr = metrics.roc_curve(samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        for f, t in zip(fpr, tpr):
            writer.writerow([repr(float(f)), repr(float(t))])


def _eval_split(args, run):
    model = fusion.load_weights(args.weights)
    run["image_side"] = model.cfg.image_side
    run["branch"] = model.cfg.branch
    splits = _load_splits(args, run)
    split = splits.get("test") or next(iter(splits.values()))
    return model, _scored_samples(model, split)


def cmd_eval(args):
    run = _run_config(args)
    _, samples = _eval_split(args, run)
    report = metrics.evaluate(samples, run["threshold"])
    os.makedirs(args.out, exist_ok=True)
    payload = json.loads(report.to_json())
    payload["run_config"] = {k: run[k] for k in sorted(run)}
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    det = metrics.det_curve(samples)
    _write_det_csv(det, os.path.join(args.out, "det.csv"))
    _write_roc_csv(samples, os.path.join(args.out, "roc.csv"))
    print(f"accuracy {report.accuracy:.2f}%  ace {report.ace:.3f}%  "
          f"apcer {report.apcer:.2f}%  bpcer {report.bpcer:.2f}%")
    return 0


def cmd_det(args):
    run = _run_config(args)
    _, samples = _eval_split(args, run)
    os.makedirs(args.out, exist_ok=True)
    det = metrics.det_curve(samples)
    _write_det_csv(det, os.path.join(args.out, "det.csv"))
    _write_roc_csv(samples, os.path.join(args.out, "roc.csv"))
    print(f"bpcer @ apcer=1%: {det.bpcer_at_apcer1:.2f}%")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="fpadfuse",
        description="Fingerprint presentation-attack detection: synthetic data, "
                    "feature extraction, joint two-branch training, ISO 30107 metrics.",
    )
    parser.add_argument("--config", help="JSON file with default option values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic live/spoof dataset")
    p.add_argument("out", help="output directory")
    p.add_argument("--count", type=int, help="images per class (default 100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--image-side", dest="image_side", type=int)
    p.add_argument("--ridge-width", dest="ridge_width", type=float)
    p.add_argument("--width-jitter", dest="width_jitter", type=float)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--blur-width", dest="blur_width", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract features for a manifest into a cache CSV")
    p.add_argument("manifest")
    p.add_argument("out", help="feature cache CSV path")
    p.add_argument("--strict", action="store_true",
                   help="fail on the first unreadable/degenerate sample")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model on the manifest's train split")
    p.add_argument("manifest")
    p.add_argument("weights", help="output weight file")
    p.add_argument("--history", help="per-epoch CSV output")
    p.add_argument("--cache", help="feature cache from `extract`")
    p.add_argument("--branch", choices=["fused", "feat", "cnn"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--image-side", dest="image_side", type=int)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved weights on the test split")
    p.add_argument("weights")
    p.add_argument("manifest")
    p.add_argument("out", help="output directory for report.json / det.csv / roc.csv")
    p.add_argument("--cache")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("det", help="emit DET and ROC curves only")
    p.add_argument("weights")
    p.add_argument("manifest")
    p.add_argument("out")
    p.add_argument("--cache")
    p.set_defaults(func=cmd_det)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (FpadError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
