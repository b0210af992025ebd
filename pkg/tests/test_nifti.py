import struct

import numpy as np
import pytest

from foldgate.errors import NiftiError
from foldgate.nifti import (
    DATATYPES,
    DT_FLOAT32,
    DT_FLOAT64,
    DT_INT16,
    DT_INT32,
    DT_UINT8,
    read_label_volume,
    read_nifti,
    read_probability_volume,
    write_channel,
    write_nifti,
)
from foldgate.volume import LabelVolume, ProbabilityVolume, VolumeGeometry

from conftest import handmade_nifti


def test_single_voxel_round_trip(tmp_path):
    v = LabelVolume(VolumeGeometry((1, 1, 1), (0.7, 0.8, 2.5)), np.array([3], dtype=np.uint8))
    write_nifti(v, tmp_path / "one.nii")
    back = read_label_volume(tmp_path / "one.nii")
    assert back == v
    assert back.geometry.spacing == pytest.approx((0.7, 0.8, 2.5), abs=1e-6)


def test_int16_volume_payload_is_bit_exact(tmp_path, rng):
    geom = VolumeGeometry((16, 16, 8), (1.0, 1.0, 3.0))
    data = rng.integers(0, 30000, size=geom.n_voxels).astype(np.int16)
    path = write_nifti(LabelVolume(geom, data), tmp_path / "v.nii")
    raw = path.read_bytes()
    assert struct.unpack_from("<h", raw, 70)[0] == DT_INT16
    assert raw[352:] == data.astype("<i2").tobytes()
    img = read_nifti(path)
    assert img.geometry == geom
    assert np.array_equal(img.data, data)


def test_empty_volume_file_size(tmp_path):
    v = LabelVolume(VolumeGeometry((4, 4, 4), (1, 1, 1)), np.zeros(64, dtype=np.uint8))
    path = write_nifti(v, tmp_path / "empty.nii")
    assert path.stat().st_size == 352 + 64


def test_header_layout(tmp_path, block):
    raw = write_nifti(block, tmp_path / "b.nii").read_bytes()
    assert struct.unpack_from("<i", raw, 0)[0] == 348
    assert struct.unpack_from("<8h", raw, 40)[:4] == (3, 6, 6, 4)
    assert struct.unpack_from("<h", raw, 70)[0] == DT_UINT8
    assert struct.unpack_from("<h", raw, 72)[0] == 8
    assert struct.unpack_from("<3f", raw, 80) == (1.0, 1.0, 2.0)
    assert struct.unpack_from("<f", raw, 108)[0] == 352.0
    assert raw[344:348] == b"n+1\x00"


@pytest.mark.parametrize("datatype", [DT_UINT8, DT_INT16, DT_INT32, DT_FLOAT32, DT_FLOAT64])
@pytest.mark.parametrize("endian", ["<", ">"])
def test_handmade_files_decode(tmp_path, rng, datatype, endian):
    dims, spacing = (5, 4, 3), (0.5, 0.75, 3.0)
    if DATATYPES[datatype].kind == "f":
        data = rng.random(60).astype(DATATYPES[datatype])
    else:
        data = rng.integers(0, 200, size=60).astype(DATATYPES[datatype])
    path = tmp_path / "h.nii"
    path.write_bytes(handmade_nifti(data, dims, spacing, datatype, endian))
    img = read_nifti(path)
    assert img.byteorder == endian
    assert img.datatype == datatype
    assert img.geometry == VolumeGeometry(dims, spacing)
    assert img.data.dtype.isnative
    assert np.array_equal(img.data, data)


def test_swapped_decodes_like_native(tmp_path, rng):
    data = rng.integers(0, 3, size=16 * 16 * 8).astype(np.int16)
    native = tmp_path / "native.nii"
    swapped = tmp_path / "swapped.nii"
    native.write_bytes(handmade_nifti(data, (16, 16, 8), (1, 1, 3), DT_INT16, "<"))
    swapped.write_bytes(handmade_nifti(data, (16, 16, 8), (1, 1, 3), DT_INT16, ">"))
    assert read_label_volume(native) == read_label_volume(swapped)


def test_probability_channel_round_trip(tmp_path):
    geom = VolumeGeometry((3, 3, 3), (1, 1, 1))
    write_channel(geom, np.full(27, 0.5), tmp_path / "c0.nii")
    write_channel(geom, np.full(27, 0.5), tmp_path / "c1.nii")
    img = read_nifti(tmp_path / "c0.nii")
    assert img.datatype == DT_FLOAT32
    assert np.all(img.data == 0.5)
    pv = read_probability_volume([tmp_path / "c0.nii", tmp_path / "c1.nii"])
    assert pv.num_classes == 2
    assert np.all(pv.channels == 0.5)


def test_probability_volume_4d_round_trip(tmp_path, rng):
    geom = VolumeGeometry((4, 3, 2), (1, 1, 1))
    raw = rng.random((3, geom.n_voxels))
    pv = ProbabilityVolume(geom, (raw / raw.sum(axis=0)).astype(np.float32).astype(np.float64))
    write_nifti(pv, tmp_path / "p.nii")
    back = read_probability_volume(tmp_path / "p.nii")
    assert back.num_classes == 3
    assert np.array_equal(back.channels, pv.channels)


def test_labels_above_uint8_use_int16(tmp_path):
    v = LabelVolume(VolumeGeometry((2, 1, 1), (1, 1, 1)), np.array([0, 300]))
    raw = write_nifti(v, tmp_path / "big.nii").read_bytes()
    assert struct.unpack_from("<h", raw, 70)[0] == DT_INT16
    assert read_label_volume(tmp_path / "big.nii") == v


def test_label_beyond_int16_rejected(tmp_path):
    v = LabelVolume(VolumeGeometry((1, 1, 1), (1, 1, 1)), np.array([40000]))
    with pytest.raises(NiftiError, match="int16"):
        write_nifti(v, tmp_path / "x.nii")
    assert not (tmp_path / "x.nii").exists()


def test_scaling_applied_to_labels(tmp_path):
    data = np.array([0, 1, 2, 3], dtype=np.uint8)
    path = tmp_path / "s.nii"
    path.write_bytes(handmade_nifti(data, (4, 1, 1), (1, 1, 1), DT_UINT8, "<", slope=2.0, inter=1.0))
    assert read_label_volume(path).voxels.tolist() == [1, 3, 5, 7]


def test_fractional_scaling_rejected_for_labels(tmp_path):
    data = np.array([0, 1], dtype=np.uint8)
    path = tmp_path / "s.nii"
    path.write_bytes(handmade_nifti(data, (2, 1, 1), (1, 1, 1), DT_UINT8, "<", slope=0.5))
    assert read_nifti(path).data.tolist() == [0.0, 0.5]
    with pytest.raises(NiftiError, match="non-integer"):
        read_label_volume(path)


def test_zero_slope_means_unscaled(tmp_path):
    data = np.array([4, 5], dtype=np.uint8)
    path = tmp_path / "z.nii"
    path.write_bytes(handmade_nifti(data, (2, 1, 1), (1, 1, 1), DT_UINT8, "<", slope=0.0))
    img = read_nifti(path)
    assert not img.scaled
    assert img.data.tolist() == [4, 5]


@pytest.mark.parametrize(
    "corrupt, message",
    [
        (lambda raw: raw[:344] + b"ni1\x00" + raw[348:], "magic"),
        (lambda raw: raw[:70] + struct.pack("<h", 128) + raw[72:], "datatype"),
        (lambda raw: raw[:-1], "declares"),
        (lambda raw: raw[:40] + struct.pack("<h", 0) + raw[42:], "dim\\[0\\]"),
        (lambda raw: raw[:40] + struct.pack("<h", 300) + raw[42:], "dim\\[0\\]"),
        (lambda raw: raw[:100], "too short"),
    ],
)
def test_corrupt_files_rejected(tmp_path, block, corrupt, message):
    good = write_nifti(block, tmp_path / "good.nii").read_bytes()
    bad = tmp_path / "bad.nii"
    bad.write_bytes(corrupt(good))
    with pytest.raises(NiftiError, match=message):
        read_nifti(bad)


def test_write_is_atomic_on_failure(tmp_path):
    with pytest.raises(FileNotFoundError):
        write_nifti(
            LabelVolume(VolumeGeometry((1, 1, 1), (1, 1, 1)), np.array([0])),
            tmp_path / "missing_dir" / "v.nii",
        )
    assert list(tmp_path.iterdir()) == []


def test_readable_by_nibabel(tmp_path, block):
    nib = pytest.importorskip("nibabel")
    path = write_nifti(block, tmp_path / "b.nii")
    img = nib.load(str(path))
    assert img.shape == (6, 6, 4)
    assert img.header.get_zooms() == pytest.approx((1.0, 1.0, 2.0))
    assert np.array_equal(np.asarray(img.dataobj), block.array)


def test_reads_nibabel_output(tmp_path, rng):
    nib = pytest.importorskip("nibabel")
    arr = rng.integers(0, 3, size=(5, 6, 7)).astype(np.int16)
    img = nib.Nifti1Image(arr, np.diag([0.8, 0.9, 2.0, 1.0]))
    img.header.set_data_dtype(np.int16)
    nib.save(img, str(tmp_path / "nb.nii"))
    v = read_label_volume(tmp_path / "nb.nii")
    assert v.geometry.dims == (5, 6, 7)
    assert v.geometry.spacing == pytest.approx((0.8, 0.9, 2.0))
    assert np.array_equal(v.array, arr)
