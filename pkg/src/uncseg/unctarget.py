"""Binary tumor error maps and their 3x3x3 box-smoothed uncertainty targets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.ndimage import binary_dilation

from . import kernels
from .errors import DataError, ShapeError
from .voxvol import Dims, LabelVolume, VoxelGrid


@dataclass(eq=False)
class ErrorMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ShapeError(f"ErrorMap must be 3-D, got shape {v.shape}")
        if v.dtype != bool and not np.all((v == 0) | (v == 1)):
            raise DataError("error map must be binary")
        self.values = v.astype(np.uint8, copy=False)

    @property
    def dims(self) -> Dims:
        return Dims.of(self.values.shape)


@dataclass(eq=False)
class UncertaintyTarget:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"UncertaintyTarget must be 3-D, got shape {v.shape}")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise DataError("uncertainty target values must lie in [0, 1]")
        self.values = v

    @property
    def dims(self) -> Dims:
        return Dims.of(self.values.shape)

    def to_grid(self) -> VoxelGrid:
        return VoxelGrid(self.values[None].astype(np.float32))


def error_array(pred: np.ndarray, gt: np.ndarray, tumor_labels: Iterable[int]) -> np.ndarray:
    """Voxels whose combined-tumor membership differs; works on any matching shapes."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    labels = sorted({int(t) for t in tumor_labels})
    return (np.isin(pred, labels) != np.isin(gt, labels)).astype(np.uint8)


def error_map(pred: LabelVolume, gt: LabelVolume, tumor_labels: Iterable[int]) -> ErrorMap:
    if pred.dims != gt.dims:
        raise ShapeError(f"prediction dims {pred.dims.shape} != ground-truth dims {gt.dims.shape}")
    if pred.schema_id is not None and gt.schema_id is not None and pred.schema_id != gt.schema_id:
        raise ShapeError(f"schemas differ: {pred.schema_id!r} vs {gt.schema_id!r}")
    return ErrorMap(error_array(pred.labels, gt.labels, tumor_labels))


def box_smooth_array(x: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3x3 mean over the last three axes; divisor fixed at 27."""
    s = kernels.box_sum3(np.ascontiguousarray(x, dtype=np.float64))
    return s / 27.0


def box_smooth_3(x: ErrorMap) -> UncertaintyTarget:
    return UncertaintyTarget(box_smooth_array(x.values))


def uncertainty_target(pred: LabelVolume, gt: LabelVolume, tumor_labels: Iterable[int]) -> UncertaintyTarget:
    return box_smooth_3(error_map(pred, gt, tumor_labels))


LOSS_MASK_MODES = ("tumor", "dilated", "global")


def loss_mask(gt: np.ndarray, tumor_labels: Iterable[int], mode: str = "tumor", radius: int = 3) -> np.ndarray:
    """Mask for the uncertainty losses/metrics; leading axes are treated as batch."""
    tumor = np.isin(gt, sorted({int(t) for t in tumor_labels}))
    if mode == "tumor":
        return tumor.astype(np.uint8)
    if mode == "global":
        return np.ones(gt.shape, dtype=np.uint8)
    if mode == "dilated":
        structure = np.ones((1,) * (gt.ndim - 3) + (3, 3, 3), dtype=bool)
        return binary_dilation(tumor, structure=structure, iterations=radius).astype(np.uint8)
    raise DataError(f"unknown uncertainty mask mode {mode!r}; expected one of {LOSS_MASK_MODES}")
