"""Segmentation loss, uncertainty losses and their weighted combination.

Each loss has a value function and a ``*_grad`` twin returning
``(value, gradient)``. Reductions run in float64 with numpy's fixed
summation order, so repeated evaluations are bit-stable.

Shapes: logits ``(B, K, X, Y, Z)``; labels ``(B, X, Y, Z)``; U, E, M any
common shape (a leading channel axis of 1 is fine).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UsageError

DICE_SMOOTH = 1e-5


@dataclass(frozen=True)
class LossWeights:
    lambda_rmsd: float = 0.1
    lambda_corr: float = 0.01
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.lambda_rmsd < 0 or self.lambda_corr < 0:
            raise UsageError("loss weights must be non-negative")
        if not self.epsilon > 0:
            raise UsageError("epsilon must be positive")

    def without_uncertainty(self) -> "LossWeights":
        return LossWeights(0.0, 0.0, self.epsilon)


@dataclass(frozen=True)
class LossBreakdown:
    dce: float
    rmsd: float
    corr: float
    total: float

    def as_row(self) -> dict[str, float]:
        return {"dce": self.dce, "rmsd": self.rmsd, "corr": self.corr, "total": self.total}


def _labels_array(gt) -> np.ndarray:
    labels = getattr(gt, "labels", gt)
    labels = np.asarray(labels)
    return labels[None] if labels.ndim == 3 else labels


def _logits_array(seg_logits) -> np.ndarray:
    data = getattr(seg_logits, "data", seg_logits)
    data = np.asarray(data, dtype=np.float64)
    return data[None] if data.ndim == 4 else data


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def dice_ce_loss_grad(seg_logits, gt, smooth: float = DICE_SMOOTH) -> tuple[float, np.ndarray]:
    """Soft Dice over foreground classes plus mean voxel cross-entropy.

    Dice statistics are pooled over the whole batch. Returns the loss and
    its gradient with respect to the logits.
    """
    logits = _logits_array(seg_logits)
    labels = _labels_array(gt)
    B, K = logits.shape[:2]
    if labels.shape != (B,) + logits.shape[2:]:
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    if labels.size and labels.max() >= K:
        raise ShapeError(f"label {int(labels.max())} exceeds the {K} logit channels")
    n = labels.size
    prob = softmax(logits)
    onehot = np.zeros_like(prob)
    np.put_along_axis(onehot, labels[:, None].astype(np.intp), 1.0, axis=1)

    axes = (0, 2, 3, 4)
    inter = (prob * onehot).sum(axis=axes)[1:]
    denom = prob.sum(axis=axes)[1:] + onehot.sum(axis=axes)[1:]
    dice = (2 * inter + smooth) / (denom + smooth)
    nfg = K - 1

    p_true = np.take_along_axis(prob, labels[:, None].astype(np.intp), axis=1)
    ce = -np.log(np.maximum(p_true, np.finfo(np.float64).tiny)).sum() / n
    loss = (1.0 - dice.mean()) + ce

    # d(1 - mean dice)/dP_c(v) for foreground c, then through the softmax
    shape = (1, nfg, 1, 1, 1)
    ddice = (2 * onehot[:, 1:] * (denom + smooth).reshape(shape) - (2 * inter + smooth).reshape(shape)) / (
        (denom + smooth) ** 2
    ).reshape(shape)
    dprob = np.zeros_like(prob)
    dprob[:, 1:] = -ddice / nfg
    dlogits = prob * (dprob - (prob * dprob).sum(axis=1, keepdims=True))
    dlogits += (prob - onehot) / n
    return float(loss), dlogits


def dice_ce_loss(seg_logits, gt, smooth: float = DICE_SMOOTH) -> float:
    return dice_ce_loss_grad(seg_logits, gt, smooth)[0]


def _unc_arrays(U, E, M):
    U = np.asarray(getattr(U, "data", U), dtype=np.float64)
    E = np.asarray(getattr(E, "values", E), dtype=np.float64)
    M = np.asarray(getattr(M, "mask", M), dtype=np.float64)
    if not (U.size == E.size == M.size):
        raise ShapeError(f"U {U.shape}, E {E.shape} and M {M.shape} differ in size")
    return U.reshape(-1), E.reshape(-1), M.reshape(-1), U.shape


def rmsd_loss_grad(U, E, M, eps: float = 1e-6) -> tuple[float, np.ndarray]:
    u, e, m, shape = _unc_arrays(U, E, M)
    d = u - e
    count = m.sum() + eps
    value = np.sqrt((m * d * d).sum() / count)
    if value == 0:
        return 0.0, np.zeros(shape)
    grad = m * d / (count * value)
    return float(value), grad.reshape(shape)


def rmsd_loss(U, E, M, eps: float = 1e-6) -> float:
    """Masked root-mean-square difference between U and E."""
    return rmsd_loss_grad(U, E, M, eps)[0]


def corr_coeff_grad(U, E, M) -> tuple[float, np.ndarray]:
    """Masked Pearson correlation and its gradient with respect to U.

    Returns 0 (with zero gradient) when U or E is constant over the mask.
    """
    u, e, m, shape = _unc_arrays(U, E, M)
    sel = m > 0
    if not sel.any() or np.ptp(u[sel]) == 0 or np.ptp(e[sel]) == 0:
        return 0.0, np.zeros(shape)
    n = m.sum()
    a = m * (u - (m * u).sum() / n)
    b = m * (e - (m * e).sum() / n)
    cov = (a * b).sum()
    var_u = (a * a).sum()
    var_e = (b * b).sum()
    root = np.sqrt(var_u * var_e)
    r = cov / root
    # masked deviations sum to zero, so the mean terms drop out of the derivative
    grad = b / root - r * a / var_u
    return float(r), grad.reshape(shape)


def corr_coeff(U, E, M) -> float:
    return corr_coeff_grad(U, E, M)[0]


def combined_loss_grad(seg_logits, gt, U, E, M, weights: LossWeights = LossWeights()):
    """Returns (LossBreakdown, d total / d logits, d total / d U)."""
    dce, dlogits = dice_ce_loss_grad(seg_logits, gt)
    rmsd, g_rmsd = rmsd_loss_grad(U, E, M, weights.epsilon)
    corr, g_corr = corr_coeff_grad(U, E, M)
    total = dce + weights.lambda_rmsd * rmsd + weights.lambda_corr * (1.0 - corr)
    dU = weights.lambda_rmsd * g_rmsd - weights.lambda_corr * g_corr
    return LossBreakdown(dce, rmsd, corr, float(total)), dlogits, dU


def combined_loss(seg_logits, gt, U, E, M, weights: LossWeights = LossWeights()) -> LossBreakdown:
    return combined_loss_grad(seg_logits, gt, U, E, M, weights)[0]


def uncertainty_terms(U, E, M, weights: LossWeights = LossWeights()) -> float:
    """The uncertainty part of the total: weighted RMSD plus weighted (1 - corr)."""
    return weights.lambda_rmsd * rmsd_loss(U, E, M, weights.epsilon) + weights.lambda_corr * (
        1.0 - corr_coeff(U, E, M)
    )
