"""Case manifests and validated case loading.

A manifest is one JSON document per case; relative paths inside it resolve
against the manifest's own directory. See ``docs/formats.md`` for the schema.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import GeometryMismatchError, ManifestError, MissingFileError, NiftiError
from .nifti import read_label_volume, read_probability_volume
from .volume import LabelVolume, ProbabilityVolume

log = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


@dataclass(frozen=True)
class FoldEntry:
    fold_index: int
    label_path: Path
    probability_path: Path | tuple[Path, ...] | None = None


@dataclass(frozen=True)
class CaseManifest:
    case_id: str
    folds: tuple[FoldEntry, ...]
    label_map: dict[int, str]
    reference_path: Path | None = None
    source: Path | None = None

    def __post_init__(self):
        if not isinstance(self.case_id, str) or not self.case_id:
            raise ManifestError("case_id must be a non-empty string")
        if len(self.folds) < 2:
            raise ManifestError(f"{self.case_id}: need at least 2 folds, got {len(self.folds)}")
        indices = sorted(f.fold_index for f in self.folds)
        if indices != list(range(len(self.folds))):
            raise ManifestError(
                f"{self.case_id}: fold indices must be unique and contiguous from 0, got {indices}"
            )
        if not self.label_map:
            raise ManifestError(f"{self.case_id}: label_map is empty")
        object.__setattr__(self, "folds", tuple(sorted(self.folds, key=lambda f: f.fold_index)))

    @property
    def k(self) -> int:
        return len(self.folds)

    def label_id(self, name_or_id) -> int:
        """Resolve a label name (or a stringified id) through the label map."""
        for lid, name in self.label_map.items():
            if name == name_or_id:
                return lid
        try:
            lid = int(name_or_id)
        except (TypeError, ValueError):
            raise KeyError(name_or_id) from None
        if lid not in self.label_map:
            raise KeyError(name_or_id)
        return lid

    def to_dict(self, relative_to=None) -> dict:
        base = Path(relative_to) if relative_to is not None else None

        def rel(p):
            if base is not None:
                try:
                    return Path(p).relative_to(base).as_posix()
                except ValueError:
                    pass
            return Path(p).as_posix()

        folds = []
        for f in self.folds:
            entry = {"fold_index": f.fold_index, "label_path": rel(f.label_path)}
            if isinstance(f.probability_path, tuple):
                entry["probability_path"] = [rel(p) for p in f.probability_path]
            elif f.probability_path is not None:
                entry["probability_path"] = rel(f.probability_path)
            folds.append(entry)
        doc = {
            "case_id": self.case_id,
            "label_map": {str(k): v for k, v in sorted(self.label_map.items())},
            "folds": folds,
        }
        if self.reference_path is not None:
            doc["reference_path"] = rel(self.reference_path)
        return doc


def _path(value, base: Path, what: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ManifestError(f"{what} must be a non-empty string")
    p = Path(value)
    return p if p.is_absolute() else base / p


def parse_manifest(doc, base_dir=".", source=None) -> CaseManifest:
    base = Path(base_dir)
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    for key in ("case_id", "folds", "label_map"):
        if key not in doc:
            raise ManifestError(f"manifest missing required field {key!r}")

    raw_map = doc["label_map"]
    if not isinstance(raw_map, dict):
        raise ManifestError("label_map must be an object of id -> name")
    label_map = {}
    for k, v in raw_map.items():
        try:
            lid = int(k)
        except ValueError:
            raise ManifestError(f"label_map key {k!r} is not an integer id") from None
        if lid <= 0:
            raise ManifestError(f"label_map id {lid} must be positive (0 is background)")
        if lid in label_map:
            raise ManifestError(f"label id {lid} listed twice")
        label_map[lid] = str(v)

    if not isinstance(doc["folds"], list):
        raise ManifestError("folds must be a list")
    folds = []
    for i, f in enumerate(doc["folds"]):
        if not isinstance(f, dict) or "label_path" not in f:
            raise ManifestError(f"fold entry {i} needs a label_path")
        idx = f.get("fold_index", i)
        if not isinstance(idx, int) or isinstance(idx, bool):
            raise ManifestError(f"fold entry {i}: fold_index must be an integer")
        prob = f.get("probability_path")
        if isinstance(prob, list):
            prob = tuple(_path(p, base, f"fold {idx} probability_path") for p in prob)
        elif prob is not None:
            prob = _path(prob, base, f"fold {idx} probability_path")
        folds.append(FoldEntry(idx, _path(f["label_path"], base, f"fold {idx} label_path"), prob))

    ref = doc.get("reference_path")
    ref = _path(ref, base, "reference_path") if ref is not None else None
    case_id = doc["case_id"]
    return CaseManifest(case_id, tuple(folds), label_map, ref, source)


def load_manifest(path) -> CaseManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingFileError(path, "manifest") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ManifestError(f"{path}: not valid JSON ({e})") from None
    return parse_manifest(doc, path.parent, source=path)


def discover_manifests(directory) -> list[Path]:
    """Every ``*.manifest.json`` directly inside ``directory``, sorted by name."""
    return sorted(Path(directory).glob("*" + MANIFEST_SUFFIX))


@dataclass(frozen=True)
class CasePrediction:
    manifest: CaseManifest
    folds: tuple[LabelVolume, ...]
    probabilities: tuple[ProbabilityVolume | None, ...]
    reference: LabelVolume | None = None
    warnings: tuple[str, ...] = field(default=())

    @property
    def case_id(self) -> str:
        return self.manifest.case_id

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def geometry(self):
        return self.folds[0].geometry

    def probability_folds(self):
        """All fold probability volumes, or None when no fold has any.

        Raises ManifestError when only some folds carry probabilities.
        """
        present = [p is not None for p in self.probabilities]
        if all(present):
            return self.probabilities
        if any(present):
            missing = [i for i, p in enumerate(present) if not p]
            raise ManifestError(
                f"{self.case_id}: probabilities given for some folds but not folds {missing}"
            )
        return None


def _read(reader, path, role):
    paths = path if isinstance(path, tuple) else (path,)
    for p in paths:
        if not Path(p).is_file():
            raise MissingFileError(p, role)
    try:
        return reader(path if not isinstance(path, tuple) else list(path))
    except NiftiError as e:
        raise NiftiError(f"{role}: {e}") from None


def load_case(manifest: CaseManifest) -> CasePrediction:
    """Read every volume a manifest names and check they share one grid."""
    cid = manifest.case_id
    folds, probs = [], []
    for entry in manifest.folds:
        role = f"{cid} fold {entry.fold_index}"
        folds.append(_read(read_label_volume, entry.label_path, role))
        if entry.probability_path is not None:
            probs.append(_read(read_probability_volume, entry.probability_path, role + " probabilities"))
        else:
            probs.append(None)

    reference = None
    if manifest.reference_path is not None:
        reference = _read(read_label_volume, manifest.reference_path, f"{cid} reference")

    grid = folds[0].geometry
    for entry, vol, prob in zip(manifest.folds, folds, probs):
        for what, v in (("labels", vol), ("probabilities", prob)):
            if v is not None and not v.geometry.matches(grid):
                raise GeometryMismatchError(
                    f"{cid}: fold {entry.fold_index} {what} have dims {v.geometry.dims} "
                    f"spacing {v.geometry.spacing}, fold 0 has dims {grid.dims} spacing {grid.spacing}",
                    fold=entry.fold_index,
                )
    if reference is not None and not reference.geometry.matches(grid):
        raise GeometryMismatchError(
            f"{cid}: reference has dims {reference.geometry.dims} spacing "
            f"{reference.geometry.spacing}, folds have dims {grid.dims} spacing {grid.spacing}"
        )
    n_classes = {p.num_classes for p in probs if p is not None}
    if len(n_classes) > 1:
        raise GeometryMismatchError(f"{cid}: folds disagree on class count {sorted(n_classes)}")

    known = set(manifest.label_map) | {0}
    warnings = []
    for name, vol in [(f"fold {e.fold_index}", v) for e, v in zip(manifest.folds, folds)] + (
        [("reference", reference)] if reference is not None else []
    ):
        unknown = sorted(vol.labels() - known)
        if unknown:
            msg = f"{cid}: {name} contains label ids {unknown} not in label_map"
            log.warning(msg)
            warnings.append(msg)

    return CasePrediction(manifest, tuple(folds), tuple(probs), reference, tuple(warnings))
