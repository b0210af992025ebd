"""In-memory volume types.

Voxel data is kept flat in x-fastest order (the NIfTI on-disk order), so a
voxel at ``(x, y, z)`` lives at ``x + nx * (y + ny * z)``. Use ``.array`` for
a ``(nx, ny, nz)`` view. Volume equality compares spacing to within
``SPACING_ATOL`` mm, since headers store spacing as float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryMismatchError

SPACING_ATOL = 1e-4
PROBABILITY_SUM_ATOL = 1e-3


def _frozen(a: np.ndarray) -> np.ndarray:
    # copy anything the caller could still mutate
    if a.flags.writeable or not a.flags.c_contiguous:
        a = np.array(a, copy=True, order="C")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class VolumeGeometry:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("geometry needs exactly three dims and three spacings")
        if any(n < 1 for n in dims):
            raise ValueError(f"dims must be >= 1, got {dims}")
        if not all(s > 0 for s in spacing):
            raise ValueError(f"spacing must be > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def matches(self, other: "VolumeGeometry", atol: float = SPACING_ATOL) -> bool:
        return self.dims == other.dims and all(
            abs(a - b) <= atol for a, b in zip(self.spacing, other.spacing)
        )


def check_same_geometry(volumes, what="volume"):
    """Raise GeometryMismatchError naming the first volume that differs from the first."""
    first = volumes[0].geometry
    for i, v in enumerate(volumes[1:], start=1):
        if not first.matches(v.geometry):
            raise GeometryMismatchError(
                f"{what} {i} has dims {v.geometry.dims} spacing {v.geometry.spacing}, "
                f"expected dims {first.dims} spacing {first.spacing}",
                fold=i,
            )


@dataclass(frozen=True, eq=False)
class LabelVolume:
    geometry: VolumeGeometry
    voxels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.dtype.kind not in "iu":
            raise ValueError(f"label voxels must be integers, got dtype {v.dtype}")
        v = v.reshape(-1)
        if v.size != self.geometry.n_voxels:
            raise ValueError(
                f"expected {self.geometry.n_voxels} voxels for dims {self.geometry.dims}, got {v.size}"
            )
        if v.size and v.min() < 0:
            raise ValueError("label ids must be >= 0")
        object.__setattr__(self, "voxels", _frozen(v))

    @classmethod
    def from_array(cls, array, spacing=(1.0, 1.0, 1.0)) -> "LabelVolume":
        """Build from an ``(nx, ny, nz)`` array indexed ``[x, y, z]``."""
        array = np.asarray(array)
        if array.ndim != 3:
            raise ValueError(f"expected a 3D array, got shape {array.shape}")
        geometry = VolumeGeometry(array.shape, spacing)
        return cls(geometry, array.reshape(-1, order="F"))

    @property
    def array(self) -> np.ndarray:
        return self.voxels.reshape(self.geometry.dims, order="F")

    def labels(self) -> set[int]:
        return {int(x) for x in np.unique(self.voxels)}

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return self.geometry.matches(other.geometry) and np.array_equal(self.voxels, other.voxels)

    def __repr__(self):
        return f"LabelVolume(dims={self.geometry.dims}, spacing={self.geometry.spacing})"


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    """Per-class probabilities, ``channels`` shaped ``(num_classes, n_voxels)``."""

    geometry: VolumeGeometry
    channels: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.channels)
        if c.dtype.kind != "f":
            c = c.astype(np.float64)
        if c.ndim != 2:
            c = c.reshape(c.shape[0], -1)
        if c.shape[0] < 2:
            raise ValueError(f"need at least 2 classes, got {c.shape[0]}")
        if c.shape[1] != self.geometry.n_voxels:
            raise ValueError(
                f"expected {self.geometry.n_voxels} voxels per channel, got {c.shape[1]}"
            )
        if c.size and (c.min() < 0.0 or c.max() > 1.0 or not np.isfinite(c).all()):
            raise ValueError("probabilities must lie in [0, 1]")
        sums = c.sum(axis=0, dtype=np.float64)
        err = np.abs(sums - 1.0)
        if err.size and err.max() > PROBABILITY_SUM_ATOL:
            bad = int(np.argmax(err))
            raise ValueError(f"class probabilities at voxel {bad} sum to {sums[bad]:.6f}")
        object.__setattr__(self, "channels", _frozen(c))

    @property
    def num_classes(self) -> int:
        return int(self.channels.shape[0])

    def __eq__(self, other):
        if not isinstance(other, ProbabilityVolume):
            return NotImplemented
        return self.geometry.matches(other.geometry) and np.array_equal(self.channels, other.channels)

    def __repr__(self):
        return (
            f"ProbabilityVolume(dims={self.geometry.dims}, spacing={self.geometry.spacing}, "
            f"num_classes={self.num_classes})"
        )
