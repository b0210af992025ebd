"""Per-case analysis shared by the CLI commands."""

from __future__ import annotations

from dataclasses import dataclass

from .ensemble import EnsembleResult, ensemble_softmax, majority_vote
from .errors import MissingReferenceError
from .flagging import FlagDecision, PolicySpec, ThresholdPolicy, decide_flag
from .manifest import CasePrediction
from .metrics import InterfoldMatrix, SummaryStats, dice, interfold_dices, label_volume_ml, summarize


def build_ensemble(case: CasePrediction) -> EnsembleResult:
    """Softmax mean when every fold has probabilities, majority vote when none do."""
    probs = case.probability_folds()
    if probs is not None:
        return ensemble_softmax(probs)
    return majority_vote(case.folds)


@dataclass(frozen=True)
class CaseAnalysis:
    case_id: str
    policy: ThresholdPolicy
    label_map: dict[int, str]
    matrices: dict[int, InterfoldMatrix]
    stats: dict[int, SummaryStats]
    decision: FlagDecision
    ensemble: EnsembleResult | None = None
    ensemble_dice: dict[int, float] | None = None
    reference_volume_ml: dict[int, float] | None = None
    ensemble_volume_ml: dict[int, float] | None = None
    warnings: tuple[str, ...] = ()

    def decide(self, statistic: str) -> FlagDecision:
        return decide_flag(self.stats, self.policy.with_statistic(statistic), self.case_id)


def analyze_case(case: CasePrediction, spec: PolicySpec, evaluate: bool = False) -> CaseAnalysis:
    """Interfold Dice, summaries and the flag decision for every policy label.

    With ``evaluate`` the ensemble is built and scored against the
    reference, which must then be present.
    """
    policy = spec.resolve(case.manifest.label_map)
    matrices = {lid: interfold_dices(case.folds, lid) for lid in policy.thresholds}
    stats = {lid: summarize(m) for lid, m in matrices.items()}
    decision = decide_flag(stats, policy, case.case_id)
    if not evaluate:
        return CaseAnalysis(
            case.case_id, policy, dict(case.manifest.label_map), matrices, stats, decision,
            warnings=case.warnings,
        )
    if case.reference is None:
        raise MissingReferenceError(f"{case.case_id}: manifest has no reference_path")
    ens = build_ensemble(case)
    return CaseAnalysis(
        case.case_id,
        policy,
        dict(case.manifest.label_map),
        matrices,
        stats,
        decision,
        ensemble=ens,
        ensemble_dice={lid: dice(ens.labels, case.reference, lid) for lid in policy.thresholds},
        reference_volume_ml={lid: label_volume_ml(case.reference, lid) for lid in policy.thresholds},
        ensemble_volume_ml={lid: label_volume_ml(ens.labels, lid) for lid in policy.thresholds},
        warnings=case.warnings,
    )


def decision_document(a: CaseAnalysis) -> dict:
    labels = []
    for entry in a.decision.labels:
        lid = entry.label
        labels.append(
            {
                "label": lid,
                "name": a.label_map.get(lid, str(lid)),
                "statistic": entry.statistic,
                "value": entry.value,
                "threshold": entry.threshold,
                "flagged": entry.flagged,
                "summary": a.stats[lid].to_dict(),
                "interfold": a.matrices[lid].to_dict(),
            }
        )
    return {
        "case_id": a.case_id,
        "statistic": a.policy.statistic,
        "case_rule": a.policy.case_rule,
        "case_flagged": a.decision.case_flagged,
        "labels": labels,
        "warnings": list(a.warnings),
    }
