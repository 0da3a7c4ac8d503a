"""Multiclass gradient-boosted regression trees with histogram split search.

Each boosting round fits one depth-limited tree per class to the softmax
cross-entropy gradients and hessians, with second-order (Newton) leaf
weights and L2 leaf regularization. Split search runs on per-feature
quantile bin codes, so training cost scales with samples times features,
not candidate thresholds. Training is deterministic: identical inputs
produce bitwise-identical models.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConsistencyError,
    DegenerateModelError,
    InvalidInputError,
)

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

MODEL_MAGIC = b"GBTM"
MODEL_VERSION = 1
GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GbtConfig:
    tree_count: int
    max_depth: int
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    n_bins: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise InvalidInputError(f"tree_count must be >= 1, got {self.tree_count}")
        if self.max_depth < 1:
            raise InvalidInputError(f"max_depth must be >= 1, got {self.max_depth}")
        if not 2 <= self.n_bins <= 256:
            raise InvalidInputError(f"n_bins must be in [2, 256], got {self.n_bins}")


@dataclass
class Tree:
    """Flat node arrays; feature < 0 marks a leaf. Values include the
    learning rate, so prediction just sums them."""

    feature: np.ndarray  # int32
    split_bin: np.ndarray  # int32
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64

    @property
    def node_count(self) -> int:
        return self.feature.size

    @property
    def internal_count(self) -> int:
        return int((self.feature >= 0).sum())

    @property
    def leaf_count(self) -> int:
        return self.node_count - self.internal_count


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    train_error: list[float] = field(default_factory=list)
    eval_error: list[float] = field(default_factory=list)


@dataclass
class BoostedModel:
    class_count: int
    n_features: int
    max_depth: int
    learning_rate: float
    bin_edges: np.ndarray  # (F, n_bins - 1) float64
    trees: list[list[Tree]]  # [round][class]
    history: TrainingHistory = field(default_factory=TrainingHistory)

    @property
    def tree_count(self) -> int:
        return len(self.trees)


if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _hist_kernel(codes, idx, g, h, n_bins):
        n_feat = codes.shape[1]
        out_g = np.zeros((n_feat, n_bins))
        out_h = np.zeros((n_feat, n_bins))
        for f in prange(n_feat):
            for t in range(idx.size):
                s = idx[t]
                b = codes[s, f]
                out_g[f, b] += g[s]
                out_h[f, b] += h[s]
        return out_g, out_h

    @njit(cache=True, parallel=True)
    def _code_kernel(x, edges):
        n_samp, n_feat = x.shape
        out = np.empty((n_samp, n_feat), dtype=np.uint8)
        n_edges = edges.shape[1]
        for f in prange(n_feat):
            for i in range(n_samp):
                v = x[i, f]
                lo, hi = 0, n_edges
                while lo < hi:
                    mid = (lo + hi) // 2
                    if edges[f, mid] <= v:
                        lo = mid + 1
                    else:
                        hi = mid
                out[i, f] = lo
        return out


def _hist_numpy(codes, idx, g, h, n_bins):
    n_feat = codes.shape[1]
    sub = codes[idx].astype(np.int64)
    flat = (sub + np.arange(n_feat)[None, :] * n_bins).ravel()
    wg = np.broadcast_to(g[idx][:, None], sub.shape).ravel()
    wh = np.broadcast_to(h[idx][:, None], sub.shape).ravel()
    out_g = np.bincount(flat, weights=wg, minlength=n_feat * n_bins)
    out_h = np.bincount(flat, weights=wh, minlength=n_feat * n_bins)
    return out_g.reshape(n_feat, n_bins), out_h.reshape(n_feat, n_bins)


def _codes_numpy(x, edges):
    out = np.empty(x.shape, dtype=np.uint8)
    for f in range(x.shape[1]):
        out[:, f] = np.searchsorted(edges[f], x[:, f], side="right")
    return out


def _build_histograms(codes, idx, g, h, n_bins):
    if HAVE_NUMBA:
        return _hist_kernel(codes, idx, g, h, n_bins)
    return _hist_numpy(codes, idx, g, h, n_bins)


def _compute_codes(x, edges):
    if HAVE_NUMBA:
        return _code_kernel(np.ascontiguousarray(x), np.ascontiguousarray(edges))
    return _codes_numpy(x, edges)


def _quantile_edges(x: np.ndarray, n_bins: int) -> np.ndarray:
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    return np.quantile(x, qs, axis=0).T.copy()  # (F, n_bins - 1)


def _best_splits(hist_g, hist_h, total_g, total_h, cfg: GbtConfig):
    """Best (gain, feature, bin) over the cumulative histogram scan."""
    cum_g = np.cumsum(hist_g, axis=1)[:, :-1]
    cum_h = np.cumsum(hist_h, axis=1)[:, :-1]
    rest_g = total_g - cum_g
    rest_h = total_h - cum_h
    lam = cfg.reg_lambda
    parent = total_g * total_g / (total_h + lam + 1e-16)
    gain = 0.5 * (
        cum_g * cum_g / (cum_h + lam + 1e-16)
        + rest_g * rest_g / (rest_h + lam + 1e-16)
        - parent
    )
    valid = (cum_h >= cfg.min_child_weight) & (rest_h >= cfg.min_child_weight)
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    f, b = divmod(flat, gain.shape[1])
    return float(gain[f, b]), f, b


def _grow_tree(codes: np.ndarray, g: np.ndarray, h: np.ndarray,
               cfg: GbtConfig) -> Tree:
    n = codes.shape[0]
    feature = [-1]
    split_bin = [-1]
    left = [-1]
    right = [-1]
    value = [0.0]
    sums = [(float(g.sum()), float(h.sum()))]
    frontier = [(0, np.arange(n, dtype=np.int64))]

    for _ in range(cfg.max_depth):
        next_frontier = []
        for node_id, idx in frontier:
            if idx.size < 2:
                continue
            hist_g, hist_h = _build_histograms(codes, idx, g, h, cfg.n_bins)
            total_g, total_h = sums[node_id]
            gain, f, b = _best_splits(hist_g, hist_h, total_g, total_h, cfg)
            if not np.isfinite(gain) or gain <= GAIN_EPS:
                continue
            mask = codes[idx, f] <= b
            left_idx, right_idx = idx[mask], idx[~mask]
            left_id, right_id = len(feature), len(feature) + 1
            feature[node_id] = f
            split_bin[node_id] = b
            left[node_id] = left_id
            right[node_id] = right_id
            lg = float(hist_g[f, : b + 1].sum())
            lh = float(hist_h[f, : b + 1].sum())
            for _child, child_sums, child_idx in (
                (left_id, (lg, lh), left_idx),
                (right_id, (total_g - lg, total_h - lh), right_idx),
            ):
                feature.append(-1)
                split_bin.append(-1)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
                sums.append(child_sums)
                next_frontier.append((_child, child_idx))
        frontier = next_frontier
        if not frontier:
            break

    tree = Tree(
        feature=np.array(feature, dtype=np.int32),
        split_bin=np.array(split_bin, dtype=np.int32),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
    )
    leaves = tree.feature < 0
    sums_arr = np.array(sums)
    tree.value[leaves] = (
        -cfg.learning_rate * sums_arr[leaves, 0] / (sums_arr[leaves, 1] + cfg.reg_lambda + 1e-16)
    )
    return tree


def _tree_apply(codes: np.ndarray, tree: Tree) -> np.ndarray:
    n = codes.shape[0]
    node = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    while True:
        f = tree.feature[node]
        active = f >= 0
        if not active.any():
            break
        go_left = codes[rows, np.maximum(f, 0)] <= tree.split_bin[node]
        nxt = np.where(go_left, tree.left[node], tree.right[node])
        node = np.where(active, nxt, node)
    return tree.value[node]


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_sample_matrix(features) -> np.ndarray:
    values = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if values.ndim != 2:
        raise ConsistencyError("features must be 2-D")
    return values.T  # (L, F)


def fit_gbt(features, labels, config: GbtConfig, class_count: int | None = None,
            eval_features=None, eval_labels=None) -> BoostedModel:
    """Boost `tree_count` rounds of one tree per class on softmax gradients.

    features: (N, L) matrix or FeatureMatrix. When an eval set is supplied,
    per-round train/eval error rates are recorded in the returned model's
    history (the data behind a convergence curve).
    """
    x = _as_sample_matrix(features)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != labels.size:
        raise ConsistencyError(f"{x.shape[0]} samples but {labels.size} labels")
    if not np.isfinite(x).all():
        raise ConsistencyError("features contain NaN/Inf")
    present = np.unique(labels)
    if present.size < 2:
        raise DegenerateModelError("training data contains fewer than 2 classes")
    n_classes = int(class_count) if class_count else int(labels.max()) + 1
    n_samples, n_features = x.shape

    edges = _quantile_edges(x, config.n_bins)
    codes = _compute_codes(x, edges)
    onehot = np.zeros((n_samples, n_classes))
    onehot[np.arange(n_samples), labels] = 1.0
    scores = np.zeros((n_samples, n_classes))

    do_eval = eval_features is not None and eval_labels is not None
    if do_eval:
        xe = _as_sample_matrix(eval_features)
        if xe.shape[1] != n_features:
            raise ConsistencyError(
                f"eval features have {xe.shape[1]} columns, expected {n_features}"
            )
        eval_y = np.asarray(eval_labels, dtype=np.int64)
        eval_codes = _compute_codes(xe, edges)
        eval_scores = np.zeros((xe.shape[0], n_classes))

    history = TrainingHistory()
    trees: list[list[Tree]] = []
    for _round in range(config.tree_count):
        probs = _softmax(scores)
        grad = probs - onehot
        hess = probs * (1.0 - probs)
        round_trees = []
        for c in range(n_classes):
            tree = _grow_tree(codes, grad[:, c], hess[:, c], config)
            round_trees.append(tree)
            scores[:, c] += _tree_apply(codes, tree)
            if do_eval:
                eval_scores[:, c] += _tree_apply(eval_codes, tree)
        trees.append(round_trees)

        probs_after = _softmax(scores)
        picked = np.clip(probs_after[np.arange(n_samples), labels], 1e-300, None)
        history.train_loss.append(float(-np.log(picked).mean()))
        history.train_error.append(float((scores.argmax(axis=1) != labels).mean()))
        if do_eval:
            history.eval_error.append(
                float((eval_scores.argmax(axis=1) != eval_y).mean())
            )

    return BoostedModel(
        class_count=n_classes,
        n_features=n_features,
        max_depth=config.max_depth,
        learning_rate=config.learning_rate,
        bin_edges=edges,
        trees=trees,
        history=history,
    )


def predict_scores(model: BoostedModel, features) -> np.ndarray:
    """Summed tree outputs, shape (L, C)."""
    x = _as_sample_matrix(features)
    if x.shape[1] != model.n_features:
        raise ConsistencyError(
            f"features have {x.shape[1]} columns, model expects {model.n_features}"
        )
    codes = _compute_codes(x, model.bin_edges)
    scores = np.zeros((x.shape[0], model.class_count))
    for round_trees in model.trees:
        for c, tree in enumerate(round_trees):
            scores[:, c] += _tree_apply(codes, tree)
    return scores


def predict_proba(model: BoostedModel, features) -> np.ndarray:
    """Softmax class probabilities per sample, shape (L, C)."""
    return _softmax(predict_scores(model, features))


def predict_labels(model: BoostedModel, features) -> np.ndarray:
    return predict_scores(model, features).argmax(axis=1)


def confidence(prob) -> float:
    """Shannon entropy (bits) of one probability vector; 0 log 0 = 0.

    Higher entropy means a less confident decision.
    """
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 1 or p.size < 1 or (p < -1e-9).any() or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidInputError("probabilities must be a simplex vector")
    return float(confidence_scores(p[None, :])[0])


def confidence_scores(probs: np.ndarray) -> np.ndarray:
    """Row-wise entropy in bits for a (L, C) probability matrix."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    return -terms.sum(axis=1)


def classifier_param_count(model: BoostedModel) -> int:
    """Two stored numbers per internal node (feature id, threshold), one per leaf."""
    total = 0
    for round_trees in model.trees:
        for tree in round_trees:
            total += 2 * tree.internal_count + tree.leaf_count
    return total


def classifier_flops(model: BoostedModel) -> float:
    """Per-sample estimate: one comparison per level of every tree walked,
    plus three operations per softmax term."""
    comparisons = model.tree_count * model.class_count * model.max_depth
    return float(comparisons + 3 * model.class_count)


def save_gbt(model: BoostedModel, path) -> None:
    """Self-describing binary: header, bin edges, then flattened node arrays."""
    n_edges = model.bin_edges.shape[1]
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack(
            "<IIIIQId", MODEL_VERSION, model.class_count, model.tree_count,
            model.max_depth, model.n_features, n_edges, model.learning_rate,
        ))
        f.write(np.ascontiguousarray(model.bin_edges, dtype="<f8").tobytes())
        for round_trees in model.trees:
            for tree in round_trees:
                f.write(struct.pack("<I", tree.node_count))
                f.write(tree.feature.astype("<i4").tobytes())
                f.write(tree.split_bin.astype("<i4").tobytes())
                f.write(tree.left.astype("<i4").tobytes())
                f.write(tree.right.astype("<i4").tobytes())
                f.write(tree.value.astype("<f8").tobytes())


def load_gbt(path) -> BoostedModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ConsistencyError(f"{path}: not a boosted-tree model file")
    header = struct.calcsize("<IIIIQId")
    version, n_classes, rounds, max_depth, n_features, n_edges, lr = struct.unpack_from(
        "<IIIIQId", raw, 4
    )
    if version != MODEL_VERSION:
        raise ConsistencyError(f"{path}: unsupported version {version}")
    offset = 4 + header
    edges = np.frombuffer(raw, dtype="<f8", count=n_features * n_edges, offset=offset)
    edges = edges.reshape(n_features, n_edges).copy()
    offset += 8 * n_features * n_edges
    trees: list[list[Tree]] = []
    for _ in range(rounds):
        round_trees = []
        for _ in range(n_classes):
            (count,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            arrays = []
            for dtype, width in (("<i4", 4), ("<i4", 4), ("<i4", 4), ("<i4", 4), ("<f8", 8)):
                arrays.append(np.frombuffer(raw, dtype=dtype, count=count, offset=offset).copy())
                offset += width * count
            round_trees.append(Tree(*arrays))
        trees.append(round_trees)
    return BoostedModel(
        class_count=n_classes,
        n_features=n_features,
        max_depth=max_depth,
        learning_rate=lr,
        bin_edges=edges,
        trees=trees,
    )


def write_convergence_csv(model: BoostedModel, path) -> None:
    """Per-round error rates: tree_count, train_error, test_error."""
    hist = model.history
    with open(path, "w") as f:
        f.write("tree_count,train_error,test_error\n")
        for i, train_err in enumerate(hist.train_error):
            if i < len(hist.eval_error):
                f.write(f"{i + 1},{train_err:.6f},{hist.eval_error[i]:.6f}\n")
            else:
                f.write(f"{i + 1},{train_err:.6f},\n")
