"""Command-line interface: extract features, fit models, run systems."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import dft as dft_mod
from . import gbt as gbt_mod
from . import lnt as lnt_mod
from . import pipeline as pipe
from . import splits as splits_mod
from .dataio import load_idx
from .errors import LntkitError
from .rawfeat import load_features, save_features


def _load_labels(path) -> np.ndarray:
    """Labels ride in IDX label files (same format as the datasets)."""
    import struct

    raw = Path(path).read_bytes()
    magic, count = struct.unpack_from(">II", raw, 0)
    if magic != 0x00000801:
        raise LntkitError(f"{path}: not an IDX label file")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def _save_labels(labels: np.ndarray, path) -> None:
    import struct

    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def _config_from_args(args) -> pipe.PipelineConfig:
    config = pipe.load_config(args.config) if args.config else pipe.PipelineConfig()
    overrides = {}
    for key in ("dataset", "data_dir", "seed", "rank", "c1", "c2"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "lnt", None) is not None:
        overrides["lnt_variant"] = {"basic": "basic", "lowrank": "lowrank"}[args.lnt]
    if getattr(args, "hops", None) is not None:
        overrides["hops"] = args.hops
    if getattr(args, "train_subsample", None) is not None:
        overrides["train_subsample"] = args.train_subsample
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_extract(args) -> int:
    config = _config_from_args(args)
    prepared = pipe.prepare_features(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_features(prepared.train, out / "train.fm")
    save_features(prepared.test, out / "test.fm")
    _save_labels(prepared.train_labels, out / "train-labels-idx1-ubyte")
    _save_labels(prepared.test_labels, out / "test-labels-idx1-ubyte")
    print(f"extracted {prepared.train.feature_count} features: "
          f"{prepared.train.sample_count} train / {prepared.test.sample_count} test samples")
    return 0


def _cmd_fit_lnt(args) -> int:
    features = load_features(args.features)
    labels = _load_labels(args.labels)
    class_count = args.class_count or int(labels.max()) + 1
    split_set = splits_mod.enumerate_splits(class_count)
    targets = splits_mod.build_targets(split_set, labels)
    model = lnt_mod.fit_lnt(features, targets, ridge=args.ridge)
    if args.lnt == "lowrank":
        _factors, model = lnt_mod.svd_low_rank(model, min(args.rank, *model.weights.shape))
    lnt_mod.save_lnt(model, args.out)
    print(f"fitted transform: {model.output_dim} filters x {model.input_dim} inputs "
          f"({len(split_set)} splits, ridge {model.ridge:.3g})")
    return 0


def _cmd_rank(args) -> int:
    features = load_features(args.features)
    labels = _load_labels(args.labels)
    class_count = args.class_count or int(labels.max()) + 1
    ranked = dft_mod.rank_features(features, labels, class_count, args.candidates)
    provenance = [
        "lnt" if name.startswith("lnt") else "raw" for name in features.feature_names
    ]
    dft_mod.write_dft_curve(args.out, ranked, features.feature_names, provenance)
    losses = ranked.losses()[ranked.order]
    print(f"ranked {features.feature_count} features; "
          f"loss range [{losses[0]:.4f}, {losses[-1]:.4f}] bits -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    features = load_features(args.features)
    labels = _load_labels(args.labels)
    config = gbt_mod.GbtConfig(
        tree_count=args.trees, max_depth=args.depth, learning_rate=args.learning_rate,
    )
    eval_features = load_features(args.eval_features) if args.eval_features else None
    eval_labels = _load_labels(args.eval_labels) if args.eval_labels else None
    model = gbt_mod.fit_gbt(
        features, labels, config,
        class_count=args.class_count or int(labels.max()) + 1,
        eval_features=eval_features, eval_labels=eval_labels,
    )
    gbt_mod.save_gbt(model, args.out)
    if args.convergence:
        gbt_mod.write_convergence_csv(model, args.convergence)
    print(f"trained {model.tree_count} rounds x {model.class_count} classes, "
          f"train error {model.history.train_error[-1]:.4f}")
    return 0


def _cmd_eval(args) -> int:
    model = gbt_mod.load_gbt(args.model)
    features = load_features(args.features)
    labels = _load_labels(args.labels)
    predictions = gbt_mod.predict_labels(model, features)
    accuracy = float((predictions == labels).mean())
    print(f"accuracy {100 * accuracy:.2f}% on {len(labels)} samples")
    return 0


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    output = pipe.run_system(args.system, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipe.emit_report([output.report], out)
    pipe.save_run_json(output, out / "run.json")
    np.save(out / "predictions.npy", output.predictions)
    for name, model in output.models.items():
        gbt_mod.save_gbt(model, out / f"classifier_{name}.gbt")
    print(f"{args.system}: accuracy {100 * output.report.accuracy:.2f}% "
          f"(reports in {out})")
    return 0


def _cmd_report(args) -> int:
    reports = [pipe.load_run_json(path) for path in args.runs]
    paths = pipe.emit_report(reports, args.out)
    print(f"wrote {paths['csv']} and {paths['summary']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lntkit",
        description="Generate discriminant features and run classification systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, with_system_flags=False):
        p.add_argument("--dataset", choices=("mnist", "fashion", "cifar10"))
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--hops", help="patch:channels:pool triples, comma separated")
        p.add_argument("--train-subsample", dest="train_subsample", type=int)
        if with_system_flags:
            p.add_argument("--lnt", choices=("basic", "lowrank"))
            p.add_argument("--rank", type=int)
            p.add_argument("--c1", type=float)
            p.add_argument("--c2", type=float)

    p = sub.add_parser("extract", help="datasets -> feature files")
    add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("fit-lnt", help="fit the feature-generating transform")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--class-count", dest="class_count", type=int)
    p.add_argument("--ridge", type=float)
    p.add_argument("--lnt", choices=("basic", "lowrank"), default="basic")
    p.add_argument("--rank", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit_lnt)

    p = sub.add_parser("rank", help="write the sorted discriminant-loss curve")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--class-count", dest="class_count", type=int)
    p.add_argument("--candidates", type=int, default=dft_mod.DEFAULT_CANDIDATES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("train", help="train a boosted-tree classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--class-count", dest="class_count", type=int)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--trees", type=int, required=True)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=0.1)
    p.add_argument("--eval-features", dest="eval_features")
    p.add_argument("--eval-labels", dest="eval_labels")
    p.add_argument("--convergence", help="write per-round error rates here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="accuracy of a saved classifier")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("run", help="end-to-end system by name")
    p.add_argument("--system", choices=sorted(pipe.SYSTEMS), required=True)
    add_config_flags(p, with_system_flags=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="merge run.json files into report.csv")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LntkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
