import json
import struct
from pathlib import Path

import numpy as np
import pytest

from foldgate.nifti import DATATYPES, write_nifti
from foldgate.volume import LabelVolume, ProbabilityVolume, VolumeGeometry


def random_labels(rng, dims, n_labels=3, spacing=(1.0, 1.0, 1.0)):
    geometry = VolumeGeometry(dims, spacing)
    return LabelVolume(geometry, rng.integers(0, n_labels, size=geometry.n_voxels))


def random_probabilities(rng, dims, n_classes=3):
    geometry = VolumeGeometry(dims, (1.0, 1.0, 1.0))
    raw = rng.random((n_classes, geometry.n_voxels)) + 1e-3
    return ProbabilityVolume(geometry, raw / raw.sum(axis=0))


def one_hot(labels: LabelVolume, n_classes: int) -> ProbabilityVolume:
    channels = np.stack([(labels.voxels == c).astype(np.float64) for c in range(n_classes)])
    return ProbabilityVolume(labels.geometry, channels)


def write_case(directory, case_id, folds, reference=None, probabilities=None, label_map=None):
    """Write volumes plus a manifest under ``directory``; returns the manifest path."""
    directory = Path(directory)
    vol_dir = directory / case_id
    vol_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, fold in enumerate(folds):
        write_nifti(fold, vol_dir / f"fold_{i}.nii")
        entry = {"fold_index": i, "label_path": f"{case_id}/fold_{i}.nii"}
        if probabilities is not None and probabilities[i] is not None:
            write_nifti(probabilities[i], vol_dir / f"prob_{i}.nii")
            entry["probability_path"] = f"{case_id}/prob_{i}.nii"
        entries.append(entry)
    doc = {
        "case_id": case_id,
        "label_map": label_map or {"1": "tumor"},
        "folds": entries,
    }
    if reference is not None:
        write_nifti(reference, vol_dir / "reference.nii")
        doc["reference_path"] = f"{case_id}/reference.nii"
    path = directory / f"{case_id}.manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


def handmade_nifti(data, dims, spacing, datatype, endian, slope=1.0, inter=0.0, n_channels=1):
    """Build a NIfTI-1 file field by field, independently of the writer under test."""
    hdr = bytearray(352)
    struct.pack_into(endian + "i", hdr, 0, 348)
    ndim = 4 if n_channels > 1 else 3
    struct.pack_into(endian + "8h", hdr, 40, ndim, *dims, n_channels, 1, 1, 1)
    struct.pack_into(endian + "2h", hdr, 70, datatype, DATATYPES[datatype].itemsize * 8)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(endian + "3f", hdr, 108, 352.0, slope, inter)
    hdr[344:348] = b"n+1\x00"
    payload = np.asarray(data).astype(DATATYPES[datatype].newbyteorder(endian)).tobytes()
    return bytes(hdr) + payload


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def block():
    """A 6x6x4 grid with a 3x3x2 tumor block."""
    a = np.zeros((6, 6, 4), dtype=np.uint8)
    a[1:4, 1:4, 1:3] = 1
    return LabelVolume.from_array(a, spacing=(1.0, 1.0, 2.0))


_criteria = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" in props and (report.when == "call" or report.failed):
        _criteria.append((props["criterion"], report.passed, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _criteria:
        line = f"{'PASS' if passed else 'FAIL'} {name}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
