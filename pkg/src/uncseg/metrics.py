"""Dice scores, uncertainty quality metrics and final-window run summaries."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeError, UsageError
from .labelspace import LABEL_MEAN_GROUPS, LabelSchema, resolve_group
from .losses import corr_coeff, rmsd_loss
from .unctarget import box_smooth_array, error_array, loss_mask
from .voxvol import LabelVolume, MaskVolume


def _mask_array(m) -> np.ndarray:
    return np.asarray(getattr(m, "mask", m)).astype(bool)


def dsc(pred_mask: MaskVolume | np.ndarray, gt_mask: MaskVolume | np.ndarray) -> float:
    """2|A n B| / (|A| + |B|); 1.0 when both masks are empty."""
    a = _mask_array(pred_mask)
    b = _mask_array(gt_mask)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    size = int(a.sum(dtype=np.int64)) + int(b.sum(dtype=np.int64))
    if size == 0:
        return 1.0
    return 2 * int(np.logical_and(a, b).sum(dtype=np.int64)) / size


def _labels(v) -> np.ndarray:
    return np.asarray(getattr(v, "labels", v))


def label_dsc(pred, gt, label: int) -> float:
    p, g = _labels(pred), _labels(gt)
    return dsc(p == label, g == label)


def group_dsc(pred: LabelVolume, gt: LabelVolume, schema: LabelSchema, group_name: str | int) -> float:
    """DSC for a region group.

    Tumor composites are scored as one union mask; cortical, subcortical and
    whole-brain groups as the unweighted mean of their per-label scores. An
    integer ``group_name`` scores that single label.
    """
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ShapeError(f"label volume shapes differ: {p.shape} vs {g.shape}")
    for vol in (pred, gt):
        sid = getattr(vol, "schema_id", None)
        if sid is not None and sid != schema.schema_id:
            raise ShapeError(f"volume schema {sid!r} does not match {schema.schema_id!r}")
    if isinstance(group_name, (int, np.integer)):
        schema.name_of(int(group_name))
        return label_dsc(p, g, int(group_name))
    members = sorted(resolve_group(schema, group_name))
    if group_name in LABEL_MEAN_GROUPS:
        return float(np.mean([label_dsc(p, g, lab) for lab in members]))
    return dsc(np.isin(p, members), np.isin(g, members))


def unc_metrics(U, pred, gt, schema: LabelSchema, mask_mode: str = "tumor", eps: float = 1e-6) -> tuple[float, float]:
    """RMSD and correlation between U and the smoothed error map of (pred, gt)."""
    p, g = _labels(pred), _labels(gt)
    u = np.asarray(getattr(U, "data", U), dtype=np.float64)
    u = u.reshape(u.shape[-3:]) if u.ndim == 4 and u.shape[0] == 1 else u
    if u.shape != g.shape:
        raise ShapeError(f"uncertainty shape {u.shape} does not match labels {g.shape}")
    tumor = schema.tumor_labels
    target = box_smooth_array(error_array(p, g, tumor))
    m = loss_mask(g, tumor, mask_mode)
    return rmsd_loss(u, target, m, eps), corr_coeff(u, target, m)


@dataclass
class CaseMetrics:
    case_id: int | str
    dsc: dict[str, float]
    unc_rmsd: float
    unc_corr: float

    def flat(self) -> dict[str, float]:
        row = {f"dsc_{k}": v for k, v in self.dsc.items()}
        row["unc_rmsd"] = self.unc_rmsd
        row["unc_corr"] = self.unc_corr
        return row


def evaluate_case(case_id, pred, gt, U, schema: LabelSchema, mask_mode: str = "tumor") -> CaseMetrics:
    scores = {name: group_dsc(pred, gt, schema, name) for name in schema.groups}
    rmsd, corr = unc_metrics(U, pred, gt, schema, mask_mode)
    return CaseMetrics(case_id, scores, rmsd, corr)


def mean_metrics(cases: Sequence[CaseMetrics]) -> dict[str, float]:
    if not cases:
        raise UsageError("no cases to average")
    rows = [c.flat() for c in cases]
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


@dataclass
class RunSummary:
    per_epoch: list[dict[str, float]]
    final: dict[str, float]
    window: int
    epochs_used: int = field(default=0)

    def to_json(self) -> dict:
        return {
            "window": self.window,
            "epochs_used": self.epochs_used,
            "final": self.final,
            "per_epoch": self.per_epoch,
        }


def summarize_run(
    history: Sequence[Sequence[CaseMetrics] | Mapping[str, float]], window: int = 20
) -> RunSummary:
    """Mean of every metric over the last ``min(window, len(history))`` epochs."""
    if not history:
        raise UsageError("cannot summarise an empty metric history")
    if window < 1:
        raise UsageError("window must be >= 1")
    per_epoch = [dict(e) if isinstance(e, Mapping) else mean_metrics(e) for e in history]
    used = min(window, len(per_epoch))
    tail = per_epoch[-used:]
    final = {k: float(np.mean([e[k] for e in tail])) for k in tail[0]}
    return RunSummary(per_epoch, final, window, used)
