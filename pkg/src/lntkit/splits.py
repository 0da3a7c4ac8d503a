"""Super-class bipartitions of C classes and their 0/1 target matrices.

A split assigns each class to one of two super-classes. Splits are kept as
bitmasks over the classes on the positive side; complementary masks describe
the same split, so exactly one representative per pair is enumerated.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, InvalidInputError


@dataclass(frozen=True)
class SplitScheme:
    """One bipartition; positive_set is a bitmask over class indices."""

    positive_set: int

    def classes(self) -> tuple[int, ...]:
        mask, out, i = self.positive_set, [], 0
        while mask:
            if mask & 1:
                out.append(i)
            mask >>= 1
            i += 1
        return tuple(out)

    def size(self) -> int:
        return bin(self.positive_set).count("1")


@dataclass(frozen=True)
class SplitSet:
    """All enumerated splits for a class count, in a stable order."""

    schemes: tuple[SplitScheme, ...]
    class_count: int

    def __len__(self) -> int:
        return len(self.schemes)

    def masks(self) -> np.ndarray:
        return np.array([s.positive_set for s in self.schemes], dtype=np.int64)


@dataclass(frozen=True)
class TargetMatrix:
    """Binary regression targets, one row per split and one column per sample."""

    values: np.ndarray  # (M, L) uint8

    def __post_init__(self):
        self.values.setflags(write=False)


def split_count(class_count: int) -> int:
    """Closed-form number of distinct splits for a class count.

    Sums the subset counts for positive-side sizes 1..floor(C/2); for even C
    the size-C/2 term is halved because each bipartition appears twice there.
    """
    if class_count < 2:
        raise InvalidInputError(f"need at least 2 classes, got {class_count}")
    k = class_count // 2
    total = sum(comb(class_count, l) for l in range(1, k + 1))
    if class_count % 2 == 0:
        total -= comb(class_count, k) // 2
    return total


def enumerate_splits(class_count: int) -> SplitSet:
    """Enumerate every distinct bipartition with positive side <= floor(C/2).

    For even C, the representative of each half/half pair is the side that
    contains class 0. Ordering is by positive-side size, then ascending
    bitmask, so row indices are stable across runs.
    """
    if class_count < 2:
        raise InvalidInputError(f"need at least 2 classes, got {class_count}")
    k = class_count // 2
    masks = []
    for size in range(1, k + 1):
        half = class_count % 2 == 0 and size == k
        for subset in combinations(range(class_count), size):
            if half and subset[0] != 0:
                continue
            mask = 0
            for c in subset:
                mask |= 1 << c
            masks.append(mask)
    masks.sort(key=lambda m: (bin(m).count("1"), m))
    schemes = tuple(SplitScheme(m) for m in masks)
    return SplitSet(schemes=schemes, class_count=class_count)


def build_targets(splits: SplitSet, labels) -> TargetMatrix:
    """Materialize t[m, l] = 1 iff sample l's class is in split m's positive set."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= splits.class_count):
        raise ConsistencyError(
            f"labels outside [0, {splits.class_count}): "
            f"min {int(labels.min())}, max {int(labels.max())}"
        )
    masks = splits.masks()
    values = ((masks[:, None] >> labels[None, :]) & 1).astype(np.uint8)
    return TargetMatrix(values=values)


def write_split_listing(splits: SplitSet, path) -> None:
    """Write one bitmask per line (class 0 is the rightmost bit) for audit."""
    lines = [format(s.positive_set, f"0{splits.class_count}b") for s in splits.schemes]
    Path(path).write_text("\n".join(lines) + "\n")


def read_split_listing(path, class_count: int) -> SplitSet:
    schemes = tuple(
        SplitScheme(int(line, 2))
        for line in Path(path).read_text().splitlines()
        if line.strip()
    )
    return SplitSet(schemes=schemes, class_count=class_count)
