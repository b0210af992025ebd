"""Join flag decisions with ensemble-vs-reference Dice.

A case "performed poorly" when its ensemble Dice is strictly below the
performance threshold; equality counts as performing well.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import NamedTuple

from .errors import MissingReferenceError
from .metrics import SummaryStats

TP, TN, FP, FN = "TP", "TN", "FP", "FN"
CELLS = (TP, TN, FP, FN)


def classify_case(flagged: bool, ensemble_dice: float, perf_threshold: float) -> str:
    poor = ensemble_dice < perf_threshold
    if flagged:
        return TP if poor else FP
    return FN if poor else TN


@dataclass(frozen=True)
class EvaluationRecord:
    case_id: str
    label: int
    flagged: bool
    ensemble_dice: float
    cell: str

    @classmethod
    def build(cls, case_id, label, flagged, ensemble_dice, perf_threshold):
        return cls(case_id, label, flagged, ensemble_dice, classify_case(flagged, ensemble_dice, perf_threshold))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def confusion_matrix(records) -> ConfusionMatrix:
    records = list(records)
    labels = {r.label for r in records}
    if len(labels) > 1:
        raise ValueError(f"confusion_matrix expects one label per call, got {sorted(labels)}")
    counts = dict.fromkeys(CELLS, 0)
    for r in records:
        counts[r.cell] += 1
    return ConfusionMatrix(counts[TP], counts[TN], counts[FP], counts[FN])


def _mean_std(values):
    if not values:
        return None, None
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


@dataclass(frozen=True)
class CohortSummary:
    """Flagged / unflagged / overall ensemble Dice. Empty cohorts have mean and std of None."""

    n_flagged: int
    n_unflagged: int
    flagged_mean: float | None
    flagged_std: float | None
    unflagged_mean: float | None
    unflagged_std: float | None
    overall_mean: float
    overall_std: float
    removal_delta: float | None

    @property
    def n_total(self) -> int:
        return self.n_flagged + self.n_unflagged

    def to_dict(self) -> dict:
        return {
            "n_flagged": self.n_flagged,
            "n_unflagged": self.n_unflagged,
            "flagged_mean": self.flagged_mean,
            "flagged_std": self.flagged_std,
            "unflagged_mean": self.unflagged_mean,
            "unflagged_std": self.unflagged_std,
            "overall_mean": self.overall_mean,
            "overall_std": self.overall_std,
            "removal_delta": self.removal_delta,
        }


def cohort_summary(records) -> CohortSummary:
    """Mean ± sample std of ensemble Dice per cohort, plus the gain from removing flagged cases.

    When every case is flagged nothing is left after removal and the delta
    is None.
    """
    records = list(records)
    if not records:
        raise ValueError("cohort_summary needs at least one record")
    flagged = [r.ensemble_dice for r in records if r.flagged]
    unflagged = [r.ensemble_dice for r in records if not r.flagged]
    f_mean, f_std = _mean_std(flagged)
    u_mean, u_std = _mean_std(unflagged)
    o_mean, o_std = _mean_std([r.ensemble_dice for r in records])
    if not flagged:
        delta = 0.0
    else:
        delta = None if u_mean is None else u_mean - o_mean
    return CohortSummary(len(flagged), len(unflagged), f_mean, f_std, u_mean, u_std, o_mean, o_std, delta)


class ScatterRow(NamedTuple):
    case_id: str
    ensemble_dice: float
    stat_value: float


def scatter_table(entries, statistic: str) -> list[ScatterRow]:
    """Rows of (case_id, ensemble Dice, summary statistic), sorted by case id.

    ``entries`` yields ``(case_id, SummaryStats, ensemble_dice)``; an
    ensemble Dice of None means the case had no reference.
    """
    rows = []
    for case_id, stats, ens in entries:
        if ens is None:
            raise MissingReferenceError(f"{case_id}: no ensemble Dice (case lacks a reference)")
        if not isinstance(stats, SummaryStats):
            raise TypeError(f"{case_id}: expected SummaryStats, got {type(stats).__name__}")
        rows.append(ScatterRow(case_id, float(ens), stats.get(statistic)))
    rows.sort(key=lambda r: r.case_id)
    return rows
