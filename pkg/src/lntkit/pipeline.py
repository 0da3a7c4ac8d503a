"""End-to-end systems: baseline, one-round, and confidence-routed two-round.

The baseline classifies raw features only. The one-round system unions the
raw features with top-ranked generated features and trains one classifier.
The two-round system keeps the baseline decision for confident test samples
and re-decides the highest-entropy ones with a second classifier trained on
the hardest training samples plus generated features.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dft as dft_mod
from . import gbt as gbt_mod
from . import lnt as lnt_mod
from . import splits as splits_mod
from .dataio import Dataset, load_cifar10, load_idx, rgb_to_yuv
from .errors import ConfigError, InvalidInputError
from .rawfeat import FeatureMatrix, HopConfig, apply_saab, concat_features, fit_saab, hog_features

DEFAULT_HOPS = {
    "mnist": "5:25:2,5:256:2,4:652:1",
    "fashion": "5:25:2,5:210:2,4:469:1",
    "cifar10": "5:69:2,5:576:2,5:1441:1",
}
DEFAULT_HOG = {"mnist": False, "fashion": True, "cifar10": True}

IDX_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass(frozen=True)
class ClassifierBudget:
    depth: int
    trees: int

    @classmethod
    def parse(cls, text: str) -> "ClassifierBudget":
        depth, _, trees = text.partition("x")
        return cls(int(depth), int(trees))

    def format(self) -> str:
        return f"{self.depth}x{self.trees}"


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str = "mnist"
    data_dir: str = "data"
    hops: str | None = None  # 'patch:channels:pool,...'; None = dataset default
    use_hog: bool | None = None  # None = dataset default
    hog_cell: int = 8
    hog_bins: int = 9
    lnt_variant: str = "basic"  # basic | lowrank
    rank: int = 200
    complementary_count: int | None = None  # None = all generated rows, 0 = none
    raw_count: int | None = None  # None = keep every raw feature
    ridge: float | None = None
    lnt_fit_on_routed: bool = False
    c1: float = 20.0
    c2: float = 2.0
    round1: ClassifierBudget = field(default_factory=lambda: ClassifierBudget(3, 500))
    round2: ClassifierBudget = field(default_factory=lambda: ClassifierBudget(2, 200))
    learning_rate: float = 0.1
    dft_candidates: int = 31
    train_subsample: int | None = None
    seed: int = 0
    record_convergence: bool = False

    def __post_init__(self):
        if not 0 <= self.c1 <= 100 or not 0 <= self.c2 <= 100:
            raise InvalidInputError(f"c1/c2 must be percentages, got {self.c1}/{self.c2}")
        if self.lnt_variant not in ("basic", "lowrank"):
            raise InvalidInputError(f"unknown lnt_variant {self.lnt_variant!r}")

    def hop_config(self) -> HopConfig:
        text = self.hops if self.hops is not None else DEFAULT_HOPS.get(self.dataset)
        if text is None:
            raise ConfigError(f"no default hops for dataset {self.dataset!r}; set hops")
        return HopConfig.parse(text)

    def hog_enabled(self) -> bool:
        if self.use_hog is not None:
            return self.use_hog
        return DEFAULT_HOG.get(self.dataset, False)


@dataclass(frozen=True)
class RunReport:
    system: str
    dataset: str
    seed: int
    lnt_variant: str
    accuracy: float
    featuregen_params: int
    classifier_params: int
    featuregen_flops: float
    classifier_flops: float  # averaged per test sample, routing included
    round1_classifier_flops: float
    round2_classifier_flops: float
    fraction_routed: float
    easy_count: int
    hard_count: int
    round2_train_count: int

    COLUMNS = (
        "system", "dataset", "seed", "lnt_variant", "accuracy",
        "featuregen_params", "classifier_params", "featuregen_flops",
        "classifier_flops", "round1_classifier_flops", "round2_classifier_flops",
        "fraction_routed", "easy_count", "hard_count", "round2_train_count",
    )

    def row(self) -> list:
        d = asdict(self)
        return [d[c] for c in self.COLUMNS]


@dataclass
class RunOutput:
    report: RunReport
    predictions: np.ndarray
    round1_predictions: np.ndarray | None = None
    test_entropies: np.ndarray | None = None
    models: dict = field(default_factory=dict)


@dataclass
class PreparedData:
    """Extracted raw features for one train/test pair."""

    train: FeatureMatrix
    train_labels: np.ndarray
    test: FeatureMatrix
    test_labels: np.ndarray
    class_count: int


def load_dataset_pair(config: PipelineConfig) -> tuple[Dataset, Dataset]:
    root = Path(config.data_dir)
    name = config.dataset
    if name in ("mnist", "fashion"):
        base = root / name
        train = load_idx(base / IDX_FILES[0], base / IDX_FILES[1], split_tag="train")
        test = load_idx(base / IDX_FILES[2], base / IDX_FILES[3], split_tag="test")
    elif name == "cifar10":
        base = root / name
        train = load_cifar10([base / f for f in CIFAR_TRAIN_FILES], split_tag="train")
        test = load_cifar10([base / CIFAR_TEST_FILE], split_tag="test")
    else:
        raise ConfigError(f"unknown dataset {config.dataset!r}")
    if train.channels == 3:
        train, test = rgb_to_yuv(train), rgb_to_yuv(test)
    return train, test


def prepare_features(config: PipelineConfig) -> PreparedData:
    """Load, subsample, fit the cascade on the training set, extract features."""
    train, test = load_dataset_pair(config)
    if config.train_subsample is not None and config.train_subsample < len(train):
        rng = np.random.default_rng(config.seed)
        idx = np.sort(rng.choice(len(train), size=config.train_subsample, replace=False))
        train = train.subset(idx)

    saab = fit_saab(train, config.hop_config())
    train_parts = [apply_saab(train, saab)]
    test_parts = [apply_saab(test, saab)]
    if config.hog_enabled():
        train_parts.append(hog_features(train, cell=config.hog_cell, bins=config.hog_bins))
        test_parts.append(hog_features(test, cell=config.hog_cell, bins=config.hog_bins))
    return PreparedData(
        train=concat_features(train_parts),
        train_labels=train.labels.copy(),
        test=concat_features(test_parts),
        test_labels=test.labels.copy(),
        class_count=max(train.class_count, test.class_count),
    )


def _prune_raw(prepared: PreparedData, config: PipelineConfig):
    """Optionally keep only the most discriminant raw features."""
    if config.raw_count is None or config.raw_count >= prepared.train.feature_count:
        return prepared.train, prepared.test
    ranked = dft_mod.rank_features(
        prepared.train, prepared.train_labels, prepared.class_count,
        config.dft_candidates,
    )
    keep = np.sort(dft_mod.select_top(ranked, config.raw_count))
    return prepared.train.rows(keep), prepared.test.rows(keep)


@dataclass
class GeneratedFeatures:
    train: FeatureMatrix
    test: FeatureMatrix
    deployed: lnt_mod.LntModel


def _generate_complementary(config: PipelineConfig, fit_features: FeatureMatrix,
                            fit_labels: np.ndarray, raw_train: FeatureMatrix,
                            raw_test: FeatureMatrix, class_count: int,
                            select_features: FeatureMatrix | None = None,
                            select_labels: np.ndarray | None = None,
                            ) -> GeneratedFeatures | None:
    """Fit the transform, reduce/select filters, and apply to both sides.

    fit_features/fit_labels choose the fitting population; selection by
    discriminant ranking runs on select_features (defaults to the fitting
    population's generated rows).
    """
    if config.complementary_count == 0:
        return None
    split_set = splits_mod.enumerate_splits(class_count)
    targets = splits_mod.build_targets(split_set, fit_labels)
    base = lnt_mod.fit_lnt(fit_features, targets, ridge=config.ridge)
    if config.lnt_variant == "lowrank":
        _factors, generator = lnt_mod.svd_low_rank(
            base, min(config.rank, *base.weights.shape)
        )
    else:
        generator = base

    count = config.complementary_count
    if count is not None and count < generator.output_dim:
        sel_fm = select_features if select_features is not None else fit_features
        sel_labels = select_labels if select_labels is not None else fit_labels
        scored = lnt_mod.apply_lnt(generator, sel_fm)
        ranked = dft_mod.rank_features(
            scored.values, sel_labels, class_count, config.dft_candidates
        )
        deployed = generator.row_subset(dft_mod.select_top(ranked, count))
    else:
        deployed = generator

    comp_train = lnt_mod.apply_lnt(deployed, raw_train)
    comp_test = lnt_mod.apply_lnt(deployed, raw_test)
    return GeneratedFeatures(
        train=FeatureMatrix(values=comp_train.values, feature_names=comp_train.provenance),
        test=FeatureMatrix(values=comp_test.values, feature_names=comp_test.provenance),
        deployed=deployed,
    )


def _gbt_config(budget: ClassifierBudget, config: PipelineConfig) -> gbt_mod.GbtConfig:
    return gbt_mod.GbtConfig(
        tree_count=budget.trees,
        max_depth=budget.depth,
        learning_rate=config.learning_rate,
        seed=config.seed,
    )


def run_baseline(config: PipelineConfig, prepared: PreparedData | None = None) -> RunOutput:
    """Raw features only; generation cost terms are zero."""
    prepared = prepared if prepared is not None else prepare_features(config)
    raw_train, raw_test = _prune_raw(prepared, config)
    model = gbt_mod.fit_gbt(
        raw_train, prepared.train_labels, _gbt_config(config.round1, config),
        class_count=prepared.class_count,
        eval_features=raw_test if config.record_convergence else None,
        eval_labels=prepared.test_labels if config.record_convergence else None,
    )
    predictions = gbt_mod.predict_labels(model, raw_test)
    flops1 = gbt_mod.classifier_flops(model)
    report = RunReport(
        system="baseline",
        dataset=config.dataset,
        seed=config.seed,
        lnt_variant="none",
        accuracy=float((predictions == prepared.test_labels).mean()),
        featuregen_params=0,
        classifier_params=gbt_mod.classifier_param_count(model),
        featuregen_flops=0.0,
        classifier_flops=flops1,
        round1_classifier_flops=flops1,
        round2_classifier_flops=0.0,
        fraction_routed=0.0,
        easy_count=len(prepared.test_labels),
        hard_count=0,
        round2_train_count=0,
    )
    return RunOutput(report=report, predictions=predictions, models={"round1": model})


def run_one_round(config: PipelineConfig, prepared: PreparedData | None = None) -> RunOutput:
    """Single classifier on the union of raw and generated features."""
    prepared = prepared if prepared is not None else prepare_features(config)
    raw_train, raw_test = _prune_raw(prepared, config)
    generated = _generate_complementary(
        config, raw_train, prepared.train_labels, raw_train, raw_test,
        prepared.class_count,
    )
    if generated is None:
        train_fm, test_fm = raw_train, raw_test
        featuregen_params, featuregen_flops = 0, 0.0
    else:
        train_fm = concat_features([raw_train, generated.train])
        test_fm = concat_features([raw_test, generated.test])
        featuregen_params = lnt_mod.feature_gen_param_count(generated.deployed)
        featuregen_flops = lnt_mod.feature_gen_flops(generated.deployed, 1.0)

    model = gbt_mod.fit_gbt(
        train_fm, prepared.train_labels, _gbt_config(config.round1, config),
        class_count=prepared.class_count,
        eval_features=test_fm if config.record_convergence else None,
        eval_labels=prepared.test_labels if config.record_convergence else None,
    )
    predictions = gbt_mod.predict_labels(model, test_fm)
    flops1 = gbt_mod.classifier_flops(model)
    report = RunReport(
        system="one-round",
        dataset=config.dataset,
        seed=config.seed,
        lnt_variant=config.lnt_variant if generated is not None else "none",
        accuracy=float((predictions == prepared.test_labels).mean()),
        featuregen_params=featuregen_params,
        classifier_params=gbt_mod.classifier_param_count(model),
        featuregen_flops=featuregen_flops,
        classifier_flops=flops1,
        round1_classifier_flops=flops1,
        round2_classifier_flops=0.0,
        fraction_routed=1.0 if generated is not None else 0.0,
        easy_count=0,
        hard_count=len(prepared.test_labels),
        round2_train_count=0,
    )
    return RunOutput(report=report, predictions=predictions, models={"round1": model})


def _hardest(entropies: np.ndarray, percent: float) -> np.ndarray:
    """Indices of the hardest round(percent% of n) samples, ties by index."""
    n_hard = int(round(percent / 100.0 * entropies.size))
    order = np.argsort(-entropies, kind="stable")
    return order[:n_hard]


def run_two_round(config: PipelineConfig, prepared: PreparedData | None = None) -> RunOutput:
    """Baseline first; the highest-entropy test samples get a second opinion.

    The second-round classifier trains on the hardest c1% training samples
    with raw plus generated features; the transform itself is fitted on the
    full training set unless lnt_fit_on_routed is set.
    """
    prepared = prepared if prepared is not None else prepare_features(config)
    raw_train, raw_test = _prune_raw(prepared, config)
    model1 = gbt_mod.fit_gbt(
        raw_train, prepared.train_labels, _gbt_config(config.round1, config),
        class_count=prepared.class_count,
    )
    train_entropy = gbt_mod.confidence_scores(gbt_mod.predict_proba(model1, raw_train))
    test_entropy = gbt_mod.confidence_scores(gbt_mod.predict_proba(model1, raw_test))
    predictions = gbt_mod.predict_labels(model1, raw_test)
    round1_predictions = predictions.copy()

    hard_train = _hardest(train_entropy, config.c1)
    hard_test = _hardest(test_entropy, config.c2)
    n_test = len(prepared.test_labels)
    fraction = hard_test.size / n_test if n_test else 0.0

    featuregen_params, featuregen_flops = 0, 0.0
    flops2, params2, model2 = 0.0, 0, None
    if hard_test.size > 0 and hard_train.size >= 2:
        if config.lnt_fit_on_routed:
            fit_fm = raw_train.columns(hard_train)
            fit_labels = prepared.train_labels[hard_train]
        else:
            fit_fm, fit_labels = raw_train, prepared.train_labels
        generated = _generate_complementary(
            config, fit_fm, fit_labels, raw_train, raw_test, prepared.class_count,
        )
        if generated is None:
            union_train, union_test = raw_train, raw_test
        else:
            union_train = concat_features([raw_train, generated.train])
            union_test = concat_features([raw_test, generated.test])
            featuregen_params = lnt_mod.feature_gen_param_count(generated.deployed)
            featuregen_flops = lnt_mod.feature_gen_flops(generated.deployed, fraction)
        model2 = gbt_mod.fit_gbt(
            union_train.columns(hard_train),
            prepared.train_labels[hard_train],
            _gbt_config(config.round2, config),
            class_count=prepared.class_count,
        )
        predictions[hard_test] = gbt_mod.predict_labels(
            model2, union_test.columns(hard_test)
        )
        flops2 = gbt_mod.classifier_flops(model2)
        params2 = gbt_mod.classifier_param_count(model2)

    flops1 = gbt_mod.classifier_flops(model1)
    report = RunReport(
        system="two-round",
        dataset=config.dataset,
        seed=config.seed,
        lnt_variant=config.lnt_variant,
        accuracy=float((predictions == prepared.test_labels).mean()),
        featuregen_params=featuregen_params,
        classifier_params=gbt_mod.classifier_param_count(model1) + params2,
        featuregen_flops=featuregen_flops,
        classifier_flops=flops1 + fraction * flops2,
        round1_classifier_flops=flops1,
        round2_classifier_flops=flops2,
        fraction_routed=fraction,
        easy_count=n_test - hard_test.size,
        hard_count=int(hard_test.size),
        round2_train_count=int(hard_train.size) if model2 is not None else 0,
    )
    models = {"round1": model1}
    if model2 is not None:
        models["round2"] = model2
    return RunOutput(
        report=report,
        predictions=predictions,
        round1_predictions=round1_predictions,
        test_entropies=test_entropy,
        models=models,
    )


SYSTEMS = {
    "baseline": run_baseline,
    "one-round": run_one_round,
    "two-round": run_two_round,
}


def run_system(name: str, config: PipelineConfig,
               prepared: PreparedData | None = None) -> RunOutput:
    if name not in SYSTEMS:
        raise InvalidInputError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}")
    return SYSTEMS[name](config, prepared)


def format_kilo(x: float) -> str:
    return f"{x / 1000.0:.1f}k"


def emit_report(reports, out_dir) -> dict[str, Path]:
    """Write report.csv (one row per run) plus a human-readable summary."""
    reports = list(reports)
    if not reports:
        raise InvalidInputError("need at least one run report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RunReport.COLUMNS)
        for report in reports:
            writer.writerow(report.row())
    summary_path = out_dir / "summary.txt"
    with open(summary_path, "w") as f:
        for r in reports:
            f.write(
                f"{r.dataset} {r.system} (lnt={r.lnt_variant}, seed={r.seed}): "
                f"accuracy {100 * r.accuracy:.2f}%  "
                f"featuregen {format_kilo(r.featuregen_params)} params / "
                f"{format_kilo(r.featuregen_flops)} flops  "
                f"classifier {format_kilo(r.classifier_params)} params / "
                f"{format_kilo(r.classifier_flops)} flops  "
                f"routed {100 * r.fraction_routed:.1f}%\n"
            )
    return {"csv": csv_path, "summary": summary_path}


def save_run_json(output: RunOutput, path) -> None:
    Path(path).write_text(json.dumps(asdict(output.report), indent=2) + "\n")


def load_run_json(path) -> RunReport:
    data = json.loads(Path(path).read_text())
    return RunReport(**data)


# ---------------------------------------------------------------------------
# Config file format: 'key = value' lines, '#' comments, flat keys mirroring
# PipelineConfig. Budgets are 'depthxtrees'; hops are 'patch:channels:pool'
# triples joined by commas.

_NONE_TOKENS = {"none", "null", ""}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("round1", "round2"):
        return ClassifierBudget.parse(raw)
    if raw.lower() in _NONE_TOKENS:
        return None
    if key in ("use_hog", "lnt_fit_on_routed", "record_convergence"):
        return raw.lower() in ("1", "true", "yes", "on")
    if key in ("c1", "c2", "ridge", "learning_rate"):
        return float(raw)
    if key in ("dataset", "data_dir", "hops", "lnt_variant"):
        return raw
    return int(raw)


def load_config(path) -> PipelineConfig:
    overrides = {}
    valid = set(PipelineConfig.__dataclass_fields__)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or key not in valid:
            raise ConfigError(f"{path}:{lineno}: bad config line {line!r}")
        overrides[key] = _parse_value(key, raw)
    return PipelineConfig(**overrides)


def save_config(config: PipelineConfig, path) -> None:
    lines = []
    for key, value in asdict(config).items():
        if isinstance(value, dict):  # budgets
            value = ClassifierBudget(**value).format()
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")
