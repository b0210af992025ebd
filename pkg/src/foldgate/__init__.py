"""Flag automated segmentations whose cross-validation folds disagree."""

__version__ = "0.1.0"

from .ensemble import EnsembleResult, ensemble_softmax, majority_vote
from .evaluation import (
    CohortSummary,
    ConfusionMatrix,
    EvaluationRecord,
    classify_case,
    cohort_summary,
    confusion_matrix,
    scatter_table,
)
from .flagging import FlagDecision, LabelFlag, PolicySpec, ThresholdPolicy, decide_flag, load_policy
from .manifest import CaseManifest, CasePrediction, FoldEntry, load_case, load_manifest
from .metrics import InterfoldMatrix, SummaryStats, dice, interfold_dices, label_volume_ml, summarize
from .nifti import read_label_volume, read_nifti, read_probability_volume, write_nifti
from .volume import LabelVolume, ProbabilityVolume, VolumeGeometry
