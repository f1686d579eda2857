import numpy as np
import pytest

from uncseg.errors import InputError, ShapeError
from uncseg.labelspace import builtin_schema
from uncseg.render import (
    BLUE,
    RED,
    YELLOW,
    OverlaySpec,
    anatomy_palette,
    blend,
    overlay_intensity,
    read_ppm,
    region_palette,
    render_case,
    render_labels,
    render_slice,
    taxonomy_fixture,
    write_case_dir,
    write_ppm,
)
from uncseg.voxvol import LabelVolume, VoxelGrid

CM = builtin_schema("CM")
UM = builtin_schema("UM")


def _case(u_value=0.0):
    labels = np.zeros((4, 4, 4), np.uint16)
    labels[1:3, 1:3, :] = 2
    return LabelVolume(labels, CM), VoxelGrid(np.full((1, 4, 4, 4), u_value, np.float32))


def test_blend_arithmetic():
    yellow = np.array([[YELLOW]], np.uint8)
    assert blend(yellow, np.array([[0.5]])).tolist() == [[[255, 128, 0]]]
    assert blend(yellow, np.array([[1.0]])).tolist() == [[list(RED)]]
    assert blend(yellow, np.array([[7.0]])).tolist() == [[list(RED)]]  # clamped
    assert blend(yellow, np.array([[-1.0]])).tolist() == [[list(YELLOW)]]


def test_zero_uncertainty_reproduces_palette():
    labels, unc = _case(0.0)
    spec = OverlaySpec("axial")
    pal = anatomy_palette(CM)
    assert np.array_equal(render_slice(labels, unc, spec, pal), render_labels(labels, spec, pal))


def test_full_uncertainty_is_pure_red():
    labels, unc = _case(1.0)
    img = render_slice(labels, unc, OverlaySpec("coronal", 2), anatomy_palette(CM))
    assert (img == np.array(RED, np.uint8)).all()


def test_overlay_mask_restricts_to_tumor():
    labels, unc = _case(1.0)
    spec = OverlaySpec("axial", mask_labels=CM.tumor_labels)
    img = render_slice(labels, unc, spec, anatomy_palette(CM))
    plane = labels.labels[:, :, 2].T
    assert (img[plane == 0] == 0).all() and (img[plane == 2] == np.array(RED)).all()


def test_dims_mismatch():
    labels, _ = _case()
    with pytest.raises(ShapeError):
        render_slice(labels, VoxelGrid(np.zeros((1, 4, 4, 2), np.float32)), OverlaySpec(), anatomy_palette(CM))


def test_palettes():
    pal = anatomy_palette(UM)
    assert pal.colors[54] == YELLOW and pal.colors[0] == (0, 0, 0)
    healthy = [pal.colors[i] for i in range(1, 54)]
    assert len(set(healthy)) > 40 and YELLOW not in healthy
    assert anatomy_palette(UM) == pal
    reg = region_palette(CM)
    assert reg.colors[2] == (0, 255, 255) and reg.colors[1] == (128, 0, 128) and reg.colors[3] == (0, 255, 0)


def test_overlay_intensity_inverts_blend():
    base = np.array([[[10, 200, 30], [255, 255, 0]]], np.uint8)
    u = np.array([[0.25, 0.8]])
    assert np.allclose(overlay_intensity(blend(base, u), base), u, atol=0.01)


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
    write_ppm(img, tmp_path / "a.ppm")
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_render_case_panels_and_error_colors(tmp_path):
    gt, pred, unc, _ = taxonomy_fixture("over", dims=16, radius=4, shift=1)
    case = write_case_dir(tmp_path / "case_0007", gt, pred, unc)
    files = render_case(case, tmp_path / "out", ["axial"], CM)
    assert sorted(p.name for p in files) == sorted(
        f"case_0007_axial_{p}.ppm" for p in ("gt", "pred", "error", "unc")
    )
    err = read_ppm(tmp_path / "out/case_0007_axial_error.ppm")
    expected = (pred.labels != gt.labels)[:, :, 8].T
    assert (err[expected] == RED).all() and (err[~expected] == BLUE).all()


def test_render_case_missing_volume(tmp_path):
    gt, pred, unc, _ = taxonomy_fixture("match", dims=16, radius=4)
    case = write_case_dir(tmp_path / "c", gt, pred, unc)
    (case / "unc.vxv").unlink()
    with pytest.raises(InputError, match="unc.vxv"):
        render_case(case, tmp_path / "out", ["axial"], CM)


def test_render_is_byte_deterministic(tmp_path):
    gt, pred, unc, _ = taxonomy_fixture("under", dims=16, radius=5, shift=2)
    case = write_case_dir(tmp_path / "c", gt, pred, unc)
    a = render_case(case, tmp_path / "a", ["axial", "sagittal"], CM)
    b = render_case(case, tmp_path / "b", ["axial", "sagittal"], CM)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
