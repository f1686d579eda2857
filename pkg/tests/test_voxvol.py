import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uncseg.errors import BoundsError, DataError, FormatError, LengthError, SchemaError, ShapeError
from uncseg.labelspace import builtin_schema
from uncseg.voxvol import (
    HEADER,
    Dims,
    LabelVolume,
    MaskVolume,
    VoxelGrid,
    decode_vxv,
    extract_slice,
    labels_to_mask,
    read_vxv,
    write_vxv,
)


def test_header_is_24_bytes():
    assert HEADER.size == 24


def test_dims_reject_non_positive():
    with pytest.raises(ShapeError):
        Dims(0, 4, 4)


def test_voxelgrid_rejects_nan():
    data = np.zeros((1, 2, 2, 2), np.float32)
    data[0, 1, 1, 1] = np.nan
    with pytest.raises(DataError):
        VoxelGrid(data)


def test_scalar_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    grid = VoxelGrid(rng.standard_normal((3, 4, 5, 6)).astype(np.float32))
    write_vxv(grid, tmp_path / "g.vxv")
    back = read_vxv(tmp_path / "g.vxv")
    assert back == grid
    assert back.data.dtype == np.float32


def test_x_is_fastest_axis_on_disk(tmp_path):
    labels = np.zeros((3, 2, 2), np.uint16)
    labels[1, 0, 0] = 7  # second x position, y = z = 0
    write_vxv(LabelVolume(labels), tmp_path / "l.vxv")
    blob = (tmp_path / "l.vxv").read_bytes()
    payload = np.frombuffer(blob[24:], "<u2")
    assert payload[1] == 7 and payload.sum() == 7


def test_label_header_fields(tmp_path):
    write_vxv(LabelVolume(np.ones((2, 3, 4), np.uint16)), tmp_path / "l.vxv")
    magic, kind, channels, nx, ny, nz = HEADER.unpack_from((tmp_path / "l.vxv").read_bytes())
    assert (magic, kind, channels, nx, ny, nz) == (b"VXV1", 1, 1, 2, 3, 4)


@settings(max_examples=30, deadline=None)
@given(
    st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
    st.integers(0, 2**32 - 1),
)
def test_label_roundtrip_property(shape, seed):
    labels = np.random.default_rng(seed).integers(0, 65536, shape).astype(np.uint16)
    from uncseg.voxvol import _encode

    assert decode_vxv(_encode(LabelVolume(labels))) == LabelVolume(labels)


def _blob(kind=0, channels=1, dims=(2, 2, 2), payload=None, magic=b"VXV1"):
    head = HEADER.pack(magic, kind, channels, *dims)
    n = channels * int(np.prod(dims))
    if payload is None:
        payload = np.zeros(n, "<f4" if kind == 0 else "<u2").tobytes()
    return head + payload


def test_bad_magic():
    with pytest.raises(FormatError):
        decode_vxv(_blob(magic=b"VXV2"))


def test_short_header_and_payload():
    with pytest.raises(LengthError):
        decode_vxv(b"VXV1")
    with pytest.raises(LengthError):
        decode_vxv(_blob()[:-1])


def test_trailing_bytes_rejected():
    with pytest.raises(LengthError):
        decode_vxv(_blob() + b"\0")


def test_reserved_bytes_must_be_zero():
    blob = bytearray(_blob())
    blob[22] = 1
    with pytest.raises(FormatError):
        decode_vxv(bytes(blob))


def test_unknown_kind():
    with pytest.raises(FormatError):
        decode_vxv(_blob(kind=5))


def test_non_finite_payload_is_data_error():
    payload = np.array([np.inf] + [0] * 7, "<f4").tobytes()
    with pytest.raises(DataError):
        decode_vxv(_blob(payload=payload))


def test_labels_to_mask_and_unknown_label():
    schema = builtin_schema("CM")
    lv = LabelVolume(np.array([0, 1, 2, 3], np.uint16).reshape(4, 1, 1), schema)
    assert labels_to_mask(lv, {1, 3}).mask.ravel().tolist() == [0, 1, 0, 1]
    with pytest.raises(SchemaError):
        labels_to_mask(lv, {9})


def test_label_volume_schema_validation():
    with pytest.raises(SchemaError):
        LabelVolume(np.full((2, 2, 2), 9, np.uint16), builtin_schema("CM"))


def test_mask_rejects_non_binary():
    with pytest.raises(DataError):
        MaskVolume(np.full((2, 2, 2), 2))


def test_extract_slice_axes_and_bounds():
    labels = np.arange(24, dtype=np.uint16).reshape(2, 3, 4)
    lv = LabelVolume(labels)
    assert np.array_equal(extract_slice(lv, "sagittal", 1), labels[1])
    assert np.array_equal(extract_slice(lv, "coronal", 2), labels[:, 2])
    assert np.array_equal(extract_slice(lv, "axial", 3), labels[:, :, 3])
    with pytest.raises(BoundsError):
        extract_slice(lv, "axial", 4)
    with pytest.raises(BoundsError):
        extract_slice(lv, "axial", -1)
