"""Interobserver-threshold flagging policy.

A case is flagged for review when the chosen summary of its pairwise fold
Dice scores falls strictly below the threshold configured for a label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import PolicyError
from .metrics import STATISTICS, SummaryStats

CASE_RULES = ("any",)
BUILTIN_POLICIES = ("ct_tumor", "mr_tumor")


@dataclass(frozen=True)
class ThresholdPolicy:
    thresholds: dict[int, float]
    statistic: str = "min"
    case_rule: str = "any"

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise PolicyError(f"statistic must be one of {STATISTICS}, got {self.statistic!r}")
        if self.case_rule not in CASE_RULES:
            raise PolicyError(f"case_rule must be one of {CASE_RULES}, got {self.case_rule!r}")
        if not self.thresholds:
            raise PolicyError("policy has no thresholds")
        for lid, t in self.thresholds.items():
            if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0.0 <= t <= 1.0:
                raise PolicyError(f"threshold for label {lid} must be in [0, 1], got {t!r}")
        object.__setattr__(
            self, "thresholds", {int(k): float(v) for k, v in sorted(self.thresholds.items())}
        )

    def with_statistic(self, statistic: str) -> "ThresholdPolicy":
        return ThresholdPolicy(dict(self.thresholds), statistic, self.case_rule)


@dataclass(frozen=True)
class PolicySpec:
    """A policy as written on disk: thresholds keyed by label name."""

    thresholds: dict[str, float]
    statistic: str = "min"
    case_rule: str = "any"
    name: str = ""

    def resolve(self, label_map: dict[int, str]) -> ThresholdPolicy:
        """Map label names to ids through a case's label map.

        Keys that are integer strings are accepted as ids directly.
        """
        by_name = {name: lid for lid, name in label_map.items()}
        resolved = {}
        for key, t in self.thresholds.items():
            if key in by_name:
                resolved[by_name[key]] = t
                continue
            try:
                lid = int(key)
            except ValueError:
                raise PolicyError(
                    f"policy label {key!r} not found in label_map {sorted(by_name)}"
                ) from None
            if lid not in label_map:
                raise PolicyError(f"policy label id {lid} not in label_map")
            resolved[lid] = t
        return ThresholdPolicy(resolved, self.statistic, self.case_rule)


def parse_policy(doc, name="") -> PolicySpec:
    if not isinstance(doc, dict):
        raise PolicyError("policy must be a JSON object")
    thresholds = doc.get("thresholds")
    if not isinstance(thresholds, dict) or not thresholds:
        raise PolicyError("policy needs a non-empty 'thresholds' object")
    spec = PolicySpec(
        {str(k): v for k, v in thresholds.items()},
        doc.get("statistic", "min"),
        doc.get("case_rule", "any"),
        name,
    )
    # validate ranges and selectors eagerly, independent of any label map
    ThresholdPolicy({i: t for i, t in enumerate(spec.thresholds.values(), 1)}, spec.statistic, spec.case_rule)
    return spec


def load_policy(path_or_name) -> PolicySpec:
    """Load a policy file, or a shipped default by name (``ct_tumor``, ``mr_tumor``)."""
    text = None
    name = str(path_or_name)
    if name in BUILTIN_POLICIES:
        text = resources.files("foldgate.policies").joinpath(f"{name}.json").read_text("utf-8")
    else:
        path = Path(path_or_name)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise PolicyError(f"policy file not found: {path}") from None
        name = path.stem
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise PolicyError(f"policy {name}: invalid JSON ({e})") from None
    return parse_policy(doc, name)


@dataclass(frozen=True)
class LabelFlag:
    label: int
    statistic: str
    value: float
    threshold: float
    flagged: bool

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "statistic": self.statistic,
            "value": self.value,
            "threshold": self.threshold,
            "flagged": self.flagged,
        }


@dataclass(frozen=True)
class FlagDecision:
    case_id: str
    labels: tuple[LabelFlag, ...] = field(default=())

    @property
    def case_flagged(self) -> bool:
        return any(e.flagged for e in self.labels)

    def for_label(self, label: int) -> LabelFlag:
        for e in self.labels:
            if e.label == label:
                return e
        raise KeyError(label)


def decide_flag(stats: dict[int, SummaryStats], policy: ThresholdPolicy, case_id: str = "") -> FlagDecision:
    entries = []
    for label, threshold in policy.thresholds.items():
        if label not in stats:
            raise PolicyError(f"{case_id or 'case'}: no interfold summary for policy label {label}")
        value = stats[label].get(policy.statistic)
        entries.append(LabelFlag(label, policy.statistic, value, threshold, value < threshold))
    return FlagDecision(case_id, tuple(entries))
