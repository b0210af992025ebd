"""Dice overlap, pairwise fold agreement and label volumes."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryMismatchError
from .volume import LabelVolume, check_same_geometry

STATISTICS = ("min", "mean", "median", "max")


def _dice_from_counts(n_a: int, n_b: int, n_both: int) -> float:
    if n_a + n_b == 0:
        # both empty: the masks agree the structure is absent
        return 1.0
    return 2 * n_both / (n_a + n_b)


def dice(a: LabelVolume, b: LabelVolume, label: int) -> float:
    """Dice overlap of the voxels equal to ``label`` in ``a`` and ``b``.

    Two empty masks score 1.0; one empty mask against a non-empty one
    scores 0.0.
    """
    if not a.geometry.matches(b.geometry):
        raise GeometryMismatchError(
            f"dice: dims/spacing differ ({a.geometry} vs {b.geometry})"
        )
    ma = a.voxels == label
    mb = b.voxels == label
    return _dice_from_counts(
        int(np.count_nonzero(ma)), int(np.count_nonzero(mb)), int(np.count_nonzero(ma & mb))
    )


@dataclass(frozen=True)
class InterfoldMatrix:
    """Dice for every fold pair ``(i, j)``, ``i < j``, in lexicographic order."""

    label_id: int
    k: int
    pairs: tuple[tuple[int, int], ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.scores) != self.k * (self.k - 1) // 2 or len(self.pairs) != len(self.scores):
            raise ValueError(f"expected {self.k * (self.k - 1) // 2} pair scores")

    def __len__(self):
        return len(self.scores)

    def score(self, i: int, j: int) -> float:
        if i > j:
            i, j = j, i
        return self.scores[self.pairs.index((i, j))]

    def to_dict(self) -> dict:
        return {
            "label": self.label_id,
            "k": self.k,
            "pairs": [[i, j, s] for (i, j), s in zip(self.pairs, self.scores)],
        }


def interfold_dices(folds, label: int) -> InterfoldMatrix:
    folds = list(folds)
    if len(folds) < 2:
        raise ValueError(f"need at least 2 folds, got {len(folds)}")
    check_same_geometry(folds, "fold")

    masks = [f.voxels == label for f in folds]
    sizes = [int(np.count_nonzero(m)) for m in masks]
    pairs, scores = [], []
    for i, j in itertools.combinations(range(len(folds)), 2):
        both = int(np.count_nonzero(masks[i] & masks[j]))
        pairs.append((i, j))
        scores.append(_dice_from_counts(sizes[i], sizes[j], both))
    return InterfoldMatrix(label, len(folds), tuple(pairs), tuple(scores))


@dataclass(frozen=True)
class SummaryStats:
    min: float
    max: float
    mean: float
    median: float

    def get(self, statistic: str) -> float:
        if statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")
        return getattr(self, statistic)

    def to_dict(self) -> dict:
        return {s: getattr(self, s) for s in STATISTICS}


def summarize(m) -> SummaryStats:
    """First-order summary of an InterfoldMatrix (or any sequence of scores)."""
    scores = sorted(m.scores if isinstance(m, InterfoldMatrix) else m)
    n = len(scores)
    if n == 0:
        raise ValueError("cannot summarize an empty score set")
    lo, hi = scores[0], scores[-1]
    mid = n // 2
    median = scores[mid] if n % 2 else (scores[mid - 1] + scores[mid]) / 2
    # fsum rounding can land one ulp outside the range
    mean = min(max(math.fsum(scores) / n, lo), hi)
    return SummaryStats(min=lo, max=hi, mean=mean, median=median)


def label_volume_ml(v: LabelVolume, label: int) -> float:
    count = int(np.count_nonzero(v.voxels == label))
    return count * v.geometry.voxel_volume_mm3 / 1000.0
