"""Combine k fold predictions into one ensemble segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryMismatchError
from .volume import LabelVolume, ProbabilityVolume, check_same_geometry

SOFTMAX_MEAN = "softmax_mean"
MAJORITY_VOTE = "majority_vote"


@dataclass(frozen=True)
class EnsembleResult:
    labels: LabelVolume
    method: str
    mean_probabilities: ProbabilityVolume | None = None


def _label_dtype(top: int):
    return np.uint8 if top <= 255 else np.int16 if top <= 32767 else np.int32


def ensemble_softmax(folds) -> EnsembleResult:
    """Average class probabilities across folds, then take the per-voxel argmax.

    Ties go to the lowest class id. Fold values are sorted before summing so
    the mean, and hence the labels, do not depend on fold order.
    """
    folds = list(folds)
    if len(folds) < 2:
        raise ValueError(f"need at least 2 folds, got {len(folds)}")
    check_same_geometry(folds, "fold")
    counts = {f.num_classes for f in folds}
    if len(counts) != 1:
        raise GeometryMismatchError(f"folds disagree on number of classes: {sorted(counts)}")

    stack = np.stack([np.asarray(f.channels, dtype=np.float64) for f in folds])
    stack.sort(axis=0)
    mean = stack.sum(axis=0) / len(folds)
    labels = np.argmax(mean, axis=0).astype(_label_dtype(mean.shape[0] - 1))
    geometry = folds[0].geometry
    return EnsembleResult(
        labels=LabelVolume(geometry, labels),
        method=SOFTMAX_MEAN,
        mean_probabilities=ProbabilityVolume(geometry, mean),
    )


def majority_vote(folds) -> EnsembleResult:
    """Per-voxel modal label; ties go to the lowest label id."""
    folds = list(folds)
    if len(folds) < 2:
        raise ValueError(f"need at least 2 folds, got {len(folds)}")
    check_same_geometry(folds, "fold")

    stack = np.stack([f.voxels for f in folds])
    candidates = np.unique(stack)
    best = np.full(stack.shape[1], candidates[0], dtype=np.int64)
    best_votes = np.count_nonzero(stack == candidates[0], axis=0)
    for label in candidates[1:]:
        votes = np.count_nonzero(stack == label, axis=0)
        # strict '>' keeps the lower id on a tie
        win = votes > best_votes
        best[win] = label
        best_votes = np.where(win, votes, best_votes)
    labels = best.astype(_label_dtype(int(candidates[-1])))
    return EnsembleResult(LabelVolume(folds[0].geometry, labels), MAJORITY_VOTE)
