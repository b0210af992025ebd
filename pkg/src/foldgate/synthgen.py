"""Deterministic synthetic cohorts for desk-scale validation.

Each case is an ellipsoid "tumor". A case-level systematic error and k
independent fold perturbations are applied as random boundary-voxel flips,
both ramped with the case index, so fold disagreement and ensemble error
grow together. All randomness comes from splitmix64 streams keyed by
``(seed, case, stream)``, indexed by flat voxel position, so output does
not depend on platform or numpy version.
"""

from __future__ import annotations

import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._atomic import write_json
from .errors import GeometryMismatchError
from .manifest import MANIFEST_SUFFIX, CaseManifest, FoldEntry
from .nifti import write_nifti
from .volume import LabelVolume, VolumeGeometry

log = logging.getLogger(__name__)

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# stream ids beyond any fold index
STREAM_SHAPE = 1 << 32
STREAM_SHARED = STREAM_SHAPE + 1
STREAM_REFERENCE = STREAM_SHAPE + 2

TUMOR = 1
LABEL_MAP = {TUMOR: "tumor"}


def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, case: int, stream: int) -> int:
    k = splitmix64_mix((seed & MASK64) + GOLDEN_GAMMA)
    k = splitmix64_mix(k ^ (case & MASK64))
    return splitmix64_mix(k ^ (stream & MASK64))


def splitmix64_stream(key: int, n: int) -> np.ndarray:
    """The first ``n`` outputs of a splitmix64 generator whose state starts at ``key``."""
    state = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = state * np.uint64(GOLDEN_GAMMA) + np.uint64(key & MASK64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def uniform_stream(key: int, n: int) -> np.ndarray:
    """splitmix64 outputs mapped to [0, 1) by their top 53 bits."""
    return (splitmix64_stream(key, n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def make_ellipsoid(geometry: VolumeGeometry, center, radii, label: int = TUMOR) -> LabelVolume:
    """Label voxels whose index coordinates satisfy sum(((v - c) / r) ** 2) <= 1."""
    if any(r <= 0 for r in radii):
        raise ValueError(f"radii must be > 0, got {radii}")
    nx, ny, nz = geometry.dims
    x = ((np.arange(nx) - center[0]) / radii[0]) ** 2
    y = ((np.arange(ny) - center[1]) / radii[1]) ** 2
    z = ((np.arange(nz) - center[2]) / radii[2]) ** 2
    inside = x[:, None, None] + y[None, :, None] + z[None, None, :] <= 1.0
    if not inside.any():
        log.warning("ellipsoid at %s radii %s lies entirely outside the grid", center, radii)
    voxels = np.where(inside, label, 0).astype(np.uint8 if label <= 255 else np.int16)
    return LabelVolume(geometry, voxels.reshape(-1, order="F"))


def boundary_mask(v: LabelVolume, label: int) -> np.ndarray:
    """Flat mask of voxels whose membership differs from at least one in-grid 6-neighbour."""
    m = v.array == label
    b = np.zeros_like(m)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        diff = m[tuple(lo)] != m[tuple(hi)]
        b[tuple(lo)] |= diff
        b[tuple(hi)] |= diff
    return b.reshape(-1, order="F")


def perturb(v: LabelVolume, label: int, magnitude: float, seed: int) -> LabelVolume:
    """Flip each boundary voxel's membership in ``label`` with probability ``magnitude``.

    A voxel leaving the label becomes background. ``seed`` keys the
    splitmix64 stream; voxel i draws the stream's i-th value.
    """
    if not 0.0 <= magnitude <= 1.0:
        raise ValueError(f"magnitude must be in [0, 1], got {magnitude}")
    if magnitude == 0.0:
        return v
    flip = boundary_mask(v, label) & (uniform_stream(seed, v.geometry.n_voxels) < magnitude)
    inside = v.voxels == label
    out = v.voxels.copy()
    out[flip & inside] = 0
    out[flip & ~inside] = label
    return LabelVolume(v.geometry, out)


def brute_dice(a: LabelVolume, b: LabelVolume, label: int) -> float:
    """Reference Dice by explicit triple loop over the grid."""
    if a.geometry.dims != b.geometry.dims:
        raise GeometryMismatchError(f"brute_dice: dims {a.geometry.dims} vs {b.geometry.dims}")
    nx, ny, nz = a.geometry.dims
    va = a.voxels.tolist()
    vb = b.voxels.tolist()
    n_a = n_b = n_both = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                i = x + nx * (y + ny * z)
                in_a = va[i] == label
                in_b = vb[i] == label
                n_a += in_a
                n_b += in_b
                n_both += in_a and in_b
    if n_a + n_b == 0:
        return 1.0
    return 2 * n_both / (n_a + n_b)


@dataclass(frozen=True)
class SynthConfig:
    """Cohort generator settings.

    ``disagreement`` is the per-fold boundary flip probability reached by
    the last case, ``shared_error`` the same for the case-level error every
    fold inherits; both ramp linearly from 0 at the first case. A fraction
    ``ood_fraction`` of cases draws radii from ``ood_radii_range`` instead
    of ``radii_range``.
    """

    n_cases: int = 100
    k_folds: int = 5
    dims: tuple[int, int, int] = (32, 32, 24)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    center_jitter: float = 2.0
    radii_range: tuple[float, float] = (4.0, 9.0)
    disagreement: float = 0.5
    shared_error: float = 0.5
    reference_noise: float = 0.05
    ood_fraction: float = 0.0
    ood_radii_range: tuple[float, float] = (1.5, 3.0)
    seed: int = 7

    def __post_init__(self):
        if self.n_cases < 1:
            raise ValueError(f"n_cases must be >= 1, got {self.n_cases}")
        if self.k_folds < 2:
            raise ValueError(f"k_folds must be >= 2, got {self.k_folds}")
        for name in ("disagreement", "shared_error", "reference_noise", "ood_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("radii_range", "ood_radii_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")
        if self.center_jitter < 0:
            raise ValueError("center_jitter must be >= 0")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        VolumeGeometry(self.dims, self.spacing)

    @property
    def geometry(self) -> VolumeGeometry:
        return VolumeGeometry(self.dims, self.spacing)

    def ramp(self, case: int) -> float:
        return case / (self.n_cases - 1) if self.n_cases > 1 else 0.0

    def case_id(self, case: int) -> str:
        width = max(3, len(str(self.n_cases - 1)))
        return f"case_{case:0{width}d}"


@dataclass(frozen=True)
class SynthCase:
    case_id: str
    base: LabelVolume
    folds: tuple[LabelVolume, ...]
    reference: LabelVolume
    disagreement: float
    shared_error: float
    out_of_range: bool


def synth_case(cfg: SynthConfig, case: int) -> SynthCase:
    geom = cfg.geometry
    u = uniform_stream(stream_key(cfg.seed, case, STREAM_SHAPE), 7)
    ood = bool(u[6] < cfg.ood_fraction)
    lo, hi = cfg.ood_radii_range if ood else cfg.radii_range
    radii = [lo + (hi - lo) * u[3 + a] for a in range(3)]
    center = [(n - 1) / 2 + cfg.center_jitter * (2 * u[a] - 1) for a, n in enumerate(geom.dims)]
    base = make_ellipsoid(geom, center, radii, TUMOR)

    t = cfg.ramp(case)
    d, s = cfg.disagreement * t, cfg.shared_error * t
    consensus = perturb(base, TUMOR, s, stream_key(cfg.seed, case, STREAM_SHARED))
    folds = tuple(
        perturb(consensus, TUMOR, d, stream_key(cfg.seed, case, j)) for j in range(cfg.k_folds)
    )
    reference = perturb(base, TUMOR, cfg.reference_noise, stream_key(cfg.seed, case, STREAM_REFERENCE))
    return SynthCase(cfg.case_id(case), base, folds, reference, d, s, ood)


def _write_case(cfg: SynthConfig, case: int, out: Path) -> Path:
    sc = synth_case(cfg, case)
    final = out / sc.case_id
    tmp = Path(tempfile.mkdtemp(dir=out, prefix=f".{sc.case_id}.", suffix=".tmp"))
    try:
        for j, fold in enumerate(sc.folds):
            write_nifti(fold, tmp / f"fold_{j}.nii")
        write_nifti(sc.reference, tmp / "reference.nii")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    manifest = CaseManifest(
        sc.case_id,
        tuple(FoldEntry(j, final / f"fold_{j}.nii") for j in range(cfg.k_folds)),
        dict(LABEL_MAP),
        final / "reference.nii",
    )
    path = out / f"{sc.case_id}{MANIFEST_SUFFIX}"
    write_json(path, manifest.to_dict(relative_to=out))
    return path


def generate_cohort(cfg: SynthConfig, out_dir, jobs: int = 1) -> list[Path]:
    """Write one manifest plus a volume directory per case; returns manifest paths in case order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = asdict(cfg)
    write_json(out / "synth_config.json", doc)
    if jobs <= 1:
        return [_write_case(cfg, i, out) for i in range(cfg.n_cases)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda i: _write_case(cfg, i, out), range(cfg.n_cases)))
