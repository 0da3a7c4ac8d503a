"""Discriminant feature test: rank features by minimum weighted entropy.

Each feature's dynamic range is scanned with uniformly spaced interior
thresholds; the score is the smallest class-weighted Shannon entropy (bits)
over the resulting two-side partitions. Lower loss means a more
discriminant feature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

DEFAULT_CANDIDATES = 31


@dataclass(frozen=True)
class DftScore:
    loss: float  # weighted entropy in bits
    best_threshold: float


@dataclass(frozen=True)
class RankedFeatures:
    """Feature indices sorted by ascending loss, ties kept in input order."""

    order: np.ndarray  # permutation of feature indices
    scores: tuple[DftScore, ...]

    def losses(self) -> np.ndarray:
        return np.array([s.loss for s in self.scores])


def _entropy_bits(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    """Shannon entropy (base 2) per histogram row; empty rows score 0."""
    safe_tot = np.where(totals > 0, totals, 1)
    p = counts / safe_tot[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    return -terms.sum(axis=1)


def class_prior_entropy(labels, class_count: int) -> float:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=class_count)
    return float(_entropy_bits(counts[None, :].astype(np.float64),
                               np.array([counts.sum()], dtype=np.float64))[0])


def dft_loss(values, labels, class_count: int,
             candidate_count: int = DEFAULT_CANDIDATES) -> DftScore:
    """Minimum weighted entropy over uniformly spaced interior thresholds.

    Samples with value <= threshold form the left side. A constant feature
    has no usable partition and scores the overall class-prior entropy.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if values.ndim != 1 or values.size == 0:
        raise InvalidInputError("values must be a non-empty 1-D array")
    if values.size < 2:
        raise InvalidInputError("need at least 2 samples")
    if class_count < 2:
        raise InvalidInputError(f"need at least 2 classes, got {class_count}")
    if candidate_count < 1:
        raise InvalidInputError(f"need at least 1 candidate, got {candidate_count}")

    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return DftScore(loss=class_prior_entropy(labels, class_count), best_threshold=lo)

    thresholds = np.linspace(lo, hi, candidate_count + 2)[1:-1]

    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    sorted_labels = labels[order]
    onehot = np.zeros((values.size, class_count), dtype=np.float64)
    onehot[np.arange(values.size), sorted_labels] = 1.0
    prefix = np.vstack([np.zeros((1, class_count)), np.cumsum(onehot, axis=0)])

    ks = np.searchsorted(sorted_vals, thresholds, side="right")
    left = prefix[ks]  # (B, C)
    total = prefix[-1]
    right = total[None, :] - left
    n_left = left.sum(axis=1)
    n_right = right.sum(axis=1)
    n = float(values.size)
    losses = (n_left / n) * _entropy_bits(left, n_left) \
        + (n_right / n) * _entropy_bits(right, n_right)

    best = int(np.argmin(losses))
    return DftScore(loss=float(losses[best]), best_threshold=float(thresholds[best]))


def rank_features(features, labels, class_count: int,
                  candidate_count: int = DEFAULT_CANDIDATES) -> RankedFeatures:
    """Score every feature row and sort ascending by loss (stable).

    Degenerate rows (constant features) score the class-prior entropy and
    never abort the batch.
    """
    values = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if values.ndim != 2:
        raise InvalidInputError("features must be 2-D (rows = features)")
    scores = tuple(
        dft_loss(values[i], labels, class_count, candidate_count)
        for i in range(values.shape[0])
    )
    losses = np.array([s.loss for s in scores])
    order = np.argsort(losses, kind="stable")
    return RankedFeatures(order=order, scores=scores)


def select_top(ranked: RankedFeatures, count: int) -> np.ndarray:
    """Indices of the `count` most discriminant features."""
    if not 0 <= count <= len(ranked.order):
        raise InvalidInputError(
            f"count must be in [0, {len(ranked.order)}], got {count}"
        )
    return ranked.order[:count].copy()


def elbow_index(sorted_losses) -> int:
    """Diagnostic elbow of a sorted loss curve.

    Returns the index with maximum perpendicular distance to the chord
    between the first and last curve points. Not used for selection; the
    pipeline selects fixed top-k counts.
    """
    y = np.asarray(sorted_losses, dtype=np.float64)
    if y.size < 3:
        return 0
    x = np.arange(y.size, dtype=np.float64)
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    norm = np.hypot(dx, dy)
    if norm == 0:
        return 0
    dist = np.abs(dx * (y - y[0]) - dy * (x - x[0])) / norm
    return int(np.argmax(dist))


def write_dft_curve(path, ranked: RankedFeatures, names: Sequence[str],
                    provenance: Sequence[str]) -> None:
    """CSV of the sorted loss curve: rank, feature_name, loss, provenance."""
    if len(names) != len(ranked.scores) or len(provenance) != len(ranked.scores):
        raise InvalidInputError("need one name and one provenance entry per feature")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["rank", "feature_name", "loss", "provenance"])
        for rank, idx in enumerate(ranked.order):
            writer.writerow(
                [rank, names[idx], "%.12g" % ranked.scores[idx].loss, provenance[idx]]
            )
