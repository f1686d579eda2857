"""Slice rendering: label palettes, red uncertainty overlay, binary PPM output.

Blend law per pixel, with u clamped to [0, 1] and half-up rounding::

    out = floor((1 - u) * base + u * (255, 0, 0) + 0.5)
"""
from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .errors import InputError, ShapeError
from .labelspace import LabelSchema
from .unctarget import box_smooth_array, error_array
from .voxvol import AXES, LabelVolume, VoxelGrid, extract_slice, read_vxv, write_vxv

RED = (255, 0, 0)
BLUE = (0, 0, 255)
YELLOW = (255, 255, 0)
BLACK = (0, 0, 0)
CYAN = (0, 255, 255)
PURPLE = (128, 0, 128)
GREEN = (0, 255, 0)
GOLDEN_ANGLE = 137.50776405003785
PANELS = ("gt", "pred", "error", "unc")
CASE_FILES = {"gt": "gt.vxv", "pred": "pred.vxv", "unc": "unc.vxv"}


def _byte(x: float) -> int:
    return int(np.floor(x * 255 + 0.5))


@dataclass(frozen=True)
class Palette:
    colors: dict[int, tuple[int, int, int]]

    def lut(self, size: int) -> np.ndarray:
        table = np.zeros((max(size, max(self.colors, default=0) + 1), 3), dtype=np.uint8)
        for label, rgb in self.colors.items():
            table[label] = rgb
        return table

    def paint(self, labels2d: np.ndarray) -> np.ndarray:
        labels2d = np.asarray(labels2d, dtype=np.intp)
        return self.lut(int(labels2d.max(initial=0)) + 1)[labels2d]


def anatomy_palette(schema: LabelSchema) -> Palette:
    """Golden-angle hues keyed by label id; tumor yellow, background black."""
    tumor = schema.tumor_labels
    colors = {0: BLACK}
    for label in schema.foreground_ids:
        if label in tumor:
            colors[label] = YELLOW
            continue
        hue = (label * GOLDEN_ANGLE) % 360.0 / 360.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.9)
        colors[label] = (_byte(r), _byte(g), _byte(b))
    return Palette(colors)


def region_palette(schema: LabelSchema) -> Palette:
    """Cyan whole tumor, purple tumor core, green enhancing; falls back to anatomy colours."""
    if "whole_tumor" not in schema.groups:
        return anatomy_palette(schema)
    colors = {0: BLACK}
    for label in schema.foreground_ids:
        if label in schema.groups.get("enhancing_tumor", ()):
            colors[label] = GREEN
        elif label in schema.groups.get("tumor_core", ()):
            colors[label] = PURPLE
        elif label in schema.groups["whole_tumor"]:
            colors[label] = CYAN
        else:
            colors[label] = anatomy_palette(schema).colors[label]
    return Palette(colors)


@dataclass(frozen=True)
class OverlaySpec:
    axis: str = "axial"
    index: int | None = None  # None selects the central slice
    mask_labels: frozenset[int] | None = None  # restrict the overlay to these labels

    def resolve_index(self, shape: Sequence[int]) -> int:
        return shape[AXES[self.axis]] // 2 if self.index is None else self.index


def blend(base: np.ndarray, u: np.ndarray, color=RED) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)[..., None]
    out = (1.0 - u) * base.astype(np.float64) + u * np.asarray(color, dtype=np.float64)
    return np.floor(out + 0.5).astype(np.uint8)


def _to_image(plane: np.ndarray) -> np.ndarray:
    # rows follow the second in-plane axis, columns the first
    return np.ascontiguousarray(np.swapaxes(plane, 0, 1))


def render_slice(labels: LabelVolume, unc: VoxelGrid, spec: OverlaySpec, palette: Palette) -> np.ndarray:
    if labels.dims != unc.dims:
        raise ShapeError(f"labels {labels.dims.shape} and uncertainty {unc.dims.shape} differ")
    index = spec.resolve_index(labels.dims.shape)
    lab = extract_slice(labels, spec.axis, index)
    u = extract_slice(unc, spec.axis, index).astype(np.float64)
    if spec.mask_labels is not None:
        u = np.where(np.isin(lab, sorted(spec.mask_labels)), u, 0.0)
    return _to_image(blend(palette.paint(lab), u))


def render_labels(labels: LabelVolume, spec: OverlaySpec, palette: Palette) -> np.ndarray:
    index = spec.resolve_index(labels.dims.shape)
    return _to_image(palette.paint(extract_slice(labels, spec.axis, index)))


def render_error(pred: LabelVolume, gt: LabelVolume, tumor: Iterable[int], spec: OverlaySpec) -> np.ndarray:
    """Red where the combined-tumor prediction is wrong, blue elsewhere."""
    err = error_array(pred.labels, gt.labels, tumor)
    plane = extract_slice(err, spec.axis, spec.resolve_index(err.shape))
    img = np.where(plane[..., None] == 1, np.array(RED, np.uint8), np.array(BLUE, np.uint8))
    return _to_image(img.astype(np.uint8))


def overlay_intensity(rendered: np.ndarray, base: np.ndarray, color=RED) -> np.ndarray:
    """Recover u per pixel by projecting ``rendered - base`` onto ``color - base``."""
    base = base.astype(np.float64)
    direction = np.asarray(color, dtype=np.float64) - base
    norm2 = (direction**2).sum(axis=-1)
    delta = rendered.astype(np.float64) - base
    with np.errstate(invalid="ignore", divide="ignore"):
        u = (delta * direction).sum(axis=-1) / norm2
    return np.where(norm2 > 0, np.clip(u, 0.0, 1.0), 0.0)


# -- PPM ---------------------------------------------------------------------

def write_ppm(image: np.ndarray, path: str | os.PathLike) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"PPM needs an (H, W, 3) image, got {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P6":
        raise InputError(f"{path} is not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


# -- cases -------------------------------------------------------------------

def write_case_dir(directory: str | os.PathLike, gt: LabelVolume, pred: LabelVolume, unc: VoxelGrid) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_vxv(gt, directory / CASE_FILES["gt"])
    write_vxv(pred, directory / CASE_FILES["pred"])
    write_vxv(unc, directory / CASE_FILES["unc"])
    return directory


def load_case_dir(directory: str | os.PathLike, schema: LabelSchema):
    directory = Path(directory)
    for name in CASE_FILES.values():
        if not (directory / name).exists():
            raise InputError(f"case {directory} is missing {name}")
    gt = read_vxv(directory / CASE_FILES["gt"])
    pred = read_vxv(directory / CASE_FILES["pred"])
    unc = read_vxv(directory / CASE_FILES["unc"])
    if not isinstance(gt, LabelVolume) or not isinstance(pred, LabelVolume) or not isinstance(unc, VoxelGrid):
        raise InputError(f"case {directory}: gt/pred must be label volumes and unc a scalar volume")
    return gt.with_schema(schema), pred.with_schema(schema), unc


def render_case(
    case_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    axes: Iterable[str],
    schema: LabelSchema,
    index: int | None = None,
    overlay_mask: bool = False,
) -> list[Path]:
    """Write gt / pred / error / uncertainty panels for each axis as PPM files."""
    case_dir = Path(case_dir)
    gt, pred, unc = load_case_dir(case_dir, schema)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    regions = region_palette(schema)
    anatomy = anatomy_palette(schema)
    mask = frozenset(schema.tumor_labels) if overlay_mask else None
    written = []
    for axis in axes:
        spec = OverlaySpec(axis, index, mask)
        panels = {
            "gt": render_labels(gt, spec, regions),
            "pred": render_labels(pred, spec, regions),
            "error": render_error(pred, gt, schema.tumor_labels, spec),
            "unc": render_slice(pred, unc, spec, anatomy),
        }
        for name in PANELS:
            path = out / f"{case_dir.name}_{axis}_{name}.ppm"
            write_ppm(panels[name], path)
            written.append(path)
    return written


# -- case-taxonomy fixtures ---------------------------------------------------

FIXTURE_KINDS = ("match", "over", "under")


def _ball(dims: int, radius: float) -> np.ndarray:
    c = (dims - 1) / 2.0
    g = np.indices((dims,) * 3, dtype=np.float64) - c
    return np.sqrt((g**2).sum(axis=0)) <= radius


def taxonomy_fixture(kind: str, dims: int = 32, radius: float = 8.0, shift: int = 3, tumor_label: int = 1):
    """Constructed (gt, pred, unc, focus) for the three qualitative cases.

    * ``match``: pred == gt; focus is the band one voxel either side of the
      tumor surface.
    * ``over``: pred is gt dilated by ``shift``; focus is the false-positive shell.
    * ``under``: pred is gt eroded by ``shift``; focus is the false-negative shell.

    u is always the box-smoothed focus set. For ``over``/``under`` that is
    the smoothed error map a perfectly trained uncertainty head would emit.
    """
    if kind not in FIXTURE_KINDS:
        raise ValueError(f"fixture kind must be one of {FIXTURE_KINDS}")
    tumor = _ball(dims, radius)
    cube = np.ones((3, 3, 3), dtype=bool)
    if kind == "match":
        pred_mask = tumor
        focus = binary_dilation(tumor, cube) ^ binary_erosion(tumor, cube)
    elif kind == "over":
        pred_mask = binary_dilation(tumor, cube, iterations=shift)
        focus = pred_mask & ~tumor
    else:
        pred_mask = binary_erosion(tumor, cube, iterations=shift)
        focus = tumor & ~pred_mask
    gt = LabelVolume(tumor.astype(np.uint16) * tumor_label)
    pred = LabelVolume(pred_mask.astype(np.uint16) * tumor_label)
    unc = VoxelGrid(box_smooth_array(focus.astype(np.float64))[None].astype(np.float32))
    return gt, pred, unc, focus
