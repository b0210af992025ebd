"""Minimal single-file NIfTI-1 reader and writer.

Supports uncompressed ``.nii`` files with datatypes uint8, int16, int32,
float32 and float64, in either byte order. Orientation fields are neither
interpreted nor written; volumes are compared grid to grid.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._atomic import atomic_write_bytes
from .errors import NiftiError
from .volume import LabelVolume, ProbabilityVolume, VolumeGeometry

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DT_UINT8 = 2
DT_INT16 = 4
DT_INT32 = 8
DT_FLOAT32 = 16
DT_FLOAT64 = 64

DATATYPES = {
    DT_UINT8: np.dtype("u1"),
    DT_INT16: np.dtype("i2"),
    DT_INT32: np.dtype("i4"),
    DT_FLOAT32: np.dtype("f4"),
    DT_FLOAT64: np.dtype("f8"),
}

# xyzt_units: NIFTI_UNITS_MM
_UNITS_MM = 2
_LABEL_INT_ATOL = 1e-6


@dataclass(frozen=True)
class NiftiImage:
    """Decoded file contents.

    ``data`` is flat in file order (x fastest, then y, z, then channel) and
    already has scl_slope/scl_inter applied when the header asks for it.
    """

    geometry: VolumeGeometry
    data: np.ndarray
    datatype: int
    n_channels: int
    byteorder: str
    scaled: bool


def _parse_header(raw: bytes):
    if len(raw) < VOX_OFFSET:
        raise NiftiError(f"file too short for a NIfTI-1 header ({len(raw)} bytes)")
    if raw[344:348] != MAGIC:
        raise NiftiError(f"bad magic {raw[344:348]!r}, expected single-file 'n+1'")
    for endian in ("<", ">"):
        dim = struct.unpack_from(endian + "8h", raw, 40)
        if 1 <= dim[0] <= 7:
            break
    else:
        raise NiftiError("dim[0] is not in 1..7 under either byte order")
    datatype, bitpix = struct.unpack_from(endian + "2h", raw, 70)
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(endian + "3f", raw, 108)
    return endian, dim, datatype, bitpix, pixdim, vox_offset, scl_slope, scl_inter


def read_nifti(path) -> NiftiImage:
    """Read a NIfTI-1 file, detecting byte order from ``dim[0]``."""
    raw = Path(path).read_bytes()
    endian, dim, datatype, bitpix, pixdim, vox_offset, slope, inter = _parse_header(raw)

    if datatype not in DATATYPES:
        raise NiftiError(f"unsupported datatype code {datatype}")
    dtype = DATATYPES[datatype].newbyteorder(endian)
    if bitpix != dtype.itemsize * 8:
        raise NiftiError(f"bitpix {bitpix} does not match datatype {datatype}")

    ndim = dim[0]
    shape = [dim[i] if i <= ndim else 1 for i in range(1, 8)]
    if any(n < 1 for n in shape[:ndim]):
        raise NiftiError(f"non-positive dimension in {dim[1:ndim + 1]}")
    if any(n != 1 for n in shape[4:]):
        raise NiftiError(f"dimensions beyond the 4th are not supported: {dim[1:ndim + 1]}")
    n_channels = shape[3]

    try:
        geometry = VolumeGeometry(shape[:3], pixdim[1:4])
    except ValueError as e:
        raise NiftiError(str(e)) from None

    offset = int(vox_offset)
    if offset != vox_offset or offset < VOX_OFFSET:
        raise NiftiError(f"invalid vox_offset {vox_offset}")
    count = geometry.n_voxels * n_channels
    end = offset + count * dtype.itemsize
    if end > len(raw):
        raise NiftiError(f"header declares {end} bytes but file has {len(raw)}")

    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.astype(dtype.newbyteorder("="))

    scaled = bool((slope != 0 and slope != 1) or inter != 0)
    if scaled:
        data = data.astype(np.float64) * (slope if slope != 0 else 1.0) + inter
    return NiftiImage(geometry, data, datatype, n_channels, endian, scaled)


def _to_labels(image: NiftiImage, path) -> np.ndarray:
    data = image.data
    if data.dtype.kind == "f":
        rounded = np.rint(data)
        if data.size and np.abs(data - rounded).max() > _LABEL_INT_ATOL:
            raise NiftiError(f"{path}: label volume contains non-integer values")
        data = rounded.astype(np.int64)
    if data.size and data.min() < 0:
        raise NiftiError(f"{path}: label volume contains negative ids")
    return data


def read_label_volume(path) -> LabelVolume:
    image = read_nifti(path)
    if image.n_channels != 1:
        raise NiftiError(f"{path}: expected a 3D label volume, got {image.n_channels} channels")
    return LabelVolume(image.geometry, _to_labels(image, path))


def read_probability_volume(paths) -> ProbabilityVolume:
    """Read probabilities from one 4D file or a list of per-class 3D files."""
    if isinstance(paths, (str, os.PathLike)):
        image = read_nifti(paths)
        if image.n_channels < 2:
            raise NiftiError(f"{paths}: probability file needs >= 2 channels in dim[4]")
        channels = image.data.reshape(image.n_channels, -1)
        geometry = image.geometry
    else:
        images = [read_nifti(p) for p in paths]
        geometry = images[0].geometry
        for p, im in zip(paths, images):
            if im.n_channels != 1 or not im.geometry.matches(geometry):
                raise NiftiError(f"{p}: probability channel geometry differs from {paths[0]}")
        channels = np.stack([im.data for im in images])
    try:
        return ProbabilityVolume(geometry, channels.astype(np.float64))
    except ValueError as e:
        raise NiftiError(f"{paths}: {e}") from None


def _header(geometry, datatype, n_channels=1) -> bytes:
    dtype = DATATYPES[datatype]
    hdr = bytearray(VOX_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    nx, ny, nz = geometry.dims
    ndim = 4 if n_channels > 1 else 3
    struct.pack_into("<8h", hdr, 40, ndim, nx, ny, nz, n_channels, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, dtype.itemsize * 8)
    sx, sy, sz = geometry.spacing
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<3f", hdr, 108, float(VOX_OFFSET), 1.0, 0.0)
    hdr[123] = _UNITS_MM
    hdr[344:348] = MAGIC
    return bytes(hdr)


def encode_nifti(geometry: VolumeGeometry, data: np.ndarray, datatype: int, n_channels=1) -> bytes:
    """Serialize flat x-fastest ``data`` as a little-endian NIfTI-1 file."""
    dtype = DATATYPES[datatype].newbyteorder("<")
    payload = np.asarray(data).astype(dtype, copy=False).tobytes()
    expected = geometry.n_voxels * n_channels * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(f"payload is {len(payload)} bytes, geometry implies {expected}")
    return _header(geometry, datatype, n_channels) + payload


def label_datatype(voxels: np.ndarray) -> int:
    top = int(voxels.max()) if voxels.size else 0
    if top <= 255:
        return DT_UINT8
    if top <= np.iinfo(np.int16).max:
        return DT_INT16
    raise NiftiError(f"label id {top} exceeds the int16 range")


def write_nifti(volume, path, datatype=None) -> Path:
    """Write a LabelVolume or ProbabilityVolume atomically.

    Labels go out as uint8 when every id fits, otherwise int16. Probability
    volumes are written as one 4D float32 file with the class in ``dim[4]``.
    ``datatype`` overrides the choice (any supported code).
    """
    if isinstance(volume, LabelVolume):
        data = volume.voxels
        n_channels = 1
        if datatype is None:
            datatype = label_datatype(data)
        elif datatype in (DT_UINT8, DT_INT16, DT_INT32) and data.size:
            info = np.iinfo(DATATYPES[datatype])
            if int(data.max()) > info.max:
                raise NiftiError(f"label id {int(data.max())} does not fit datatype {datatype}")
    elif isinstance(volume, ProbabilityVolume):
        data = volume.channels.reshape(-1)
        n_channels = volume.num_classes
        datatype = DT_FLOAT32 if datatype is None else datatype
    else:
        raise TypeError(f"cannot write {type(volume).__name__}")
    if datatype not in DATATYPES:
        raise NiftiError(f"unsupported datatype code {datatype}")

    return atomic_write_bytes(path, encode_nifti(volume.geometry, data, datatype, n_channels))


def write_channel(geometry: VolumeGeometry, values, path) -> Path:
    """Write one probability channel as a 3D float32 file."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    return atomic_write_bytes(path, encode_nifti(geometry, values, DT_FLOAT32))
