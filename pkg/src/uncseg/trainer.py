"""Training loop for the four run kinds.

CM1/UM1 train the uncertainty head against the smoothed error map of the
current prediction; CM2/UM2 force both uncertainty weights to zero. Because
the uncertainty gradient never reaches the trunk, the segmentation
parameters of a CM1 run and a CM2 run with the same seed are bit-identical.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, InputError, UsageError
from .labelspace import LabelSchema
from .losses import LossBreakdown, LossWeights, combined_loss_grad
from .metrics import CaseMetrics, RunSummary, evaluate_case, summarize_run
from .net import NetConfig, Parameters, backward, forward, init_params, load_params, load_tensors, save_params, save_tensors
from .synthdata import Case
from .unctarget import LOSS_MASK_MODES, box_smooth_array, error_array, loss_mask
from .voxvol import LabelVolume

log = logging.getLogger(__name__)

RUN_KINDS = ("CM1", "CM2", "UM1", "UM2")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    run_kind: str = "CM1"
    epochs: int = 30
    train_batches_per_epoch: int = 32
    val_batches_per_epoch: int = 4
    batch_size: int = 2
    patch_dims: tuple[int, int, int] = (32, 32, 32)
    lr_start: float = 0.001
    weights: LossWeights = LossWeights()
    seed: int = 0
    target_refresh: str = "step"
    unc_loss_mask: str = "tumor"
    depth: int = 3
    base_width: int = 8
    summary_window: int = 20
    tumor_bias: float = 0.5

    def __post_init__(self):
        if self.run_kind not in RUN_KINDS:
            raise ConfigError(f"run_kind must be one of {RUN_KINDS}, got {self.run_kind!r}")
        if self.target_refresh not in ("step", "epoch"):
            raise ConfigError(f"target_refresh must be 'step' or 'epoch', got {self.target_refresh!r}")
        if self.unc_loss_mask not in LOSS_MASK_MODES:
            raise ConfigError(f"unc_loss_mask must be one of {LOSS_MASK_MODES}")
        for name in ("epochs", "train_batches_per_epoch", "val_batches_per_epoch", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.tumor_bias <= 1:
            raise ConfigError("tumor_bias must lie in [0, 1]")
        object.__setattr__(self, "patch_dims", tuple(int(d) for d in self.patch_dims))

    @property
    def uses_uncertainty(self) -> bool:
        return self.run_kind in ("CM1", "UM1")

    @property
    def effective_weights(self) -> LossWeights:
        return self.weights if self.uses_uncertainty else self.weights.without_uncertainty()

    def to_json(self) -> dict:
        doc = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "weights":
                doc.update({"lambda-rmsd": value.lambda_rmsd, "lambda-corr": value.lambda_corr, "epsilon": value.epsilon})
                continue
            doc[f.name.replace("_", "-")] = list(value) if isinstance(value, tuple) else value
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)} - {"weights"}
        kwargs, weights = {}, {}
        for key, value in doc.items():
            name = key.replace("-", "_")
            if name in ("lambda_rmsd", "lambda_corr", "epsilon"):
                weights[name] = float(value)
            elif name in known:
                kwargs[name] = value
        try:
            return cls(weights=LossWeights(**weights), **kwargs)
        except (TypeError, ValueError, UsageError) as exc:
            raise ConfigError(f"invalid training config: {exc}") from exc


@dataclass
class TrainState:
    params: Parameters
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    rng_state: dict | None = None

    def save(self, directory: str | os.PathLike) -> None:
        directory = Path(directory)
        save_params(self.params, directory)
        save_tensors(self.m, directory, "adam_m.json")
        save_tensors(self.v, directory, "adam_v.json")
        doc = {"step": self.step, "epoch": self.epoch, "rng_state": self.rng_state, "history": self.history}
        with open(directory / "state.json", "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "TrainState":
        directory = Path(directory)
        params = load_params(directory)
        try:
            with open(directory / "state.json") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"missing {directory / 'state.json'}") from None
        m = load_tensors(directory, "adam_m.json")
        v = load_tensors(directory, "adam_v.json")
        return cls(params, m, v, doc["step"], doc["epoch"], doc["history"], doc["rng_state"])


def initial_state(cfg: TrainConfig, in_channels: int, schema: LabelSchema) -> TrainState:
    net_cfg = NetConfig(in_channels, schema.num_classes, cfg.depth, cfg.base_width, cfg.seed)
    params = init_params(net_cfg)
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng([cfg.seed, 1])
    return TrainState(params, zeros, {k: z.copy() for k, z in zeros.items()}, rng_state=rng.bit_generator.state)


def lr_at(t: int, cfg: TrainConfig) -> float:
    """Linear decay from ``lr_start`` at t=0 to 0 at t=epochs."""
    if not 0 <= t <= cfg.epochs:
        raise UsageError(f"epoch {t} outside [0, {cfg.epochs}]")
    return cfg.lr_start * (1.0 - t / cfg.epochs)


def adam_update(p, g, m, v, step: int, lr: float):
    """One bias-corrected adaptive-moment update; ``step`` counts from 1."""
    m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
    v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * (g * g)
    m_hat = m / (1 - ADAM_BETA1**step)
    v_hat = v / (1 - ADAM_BETA2**step)
    return p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS), m, v


# -- batches -----------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray  # (B, C, X, Y, Z) float32, standardised
    labels: np.ndarray  # (B, X, Y, Z)
    case_ids: list[int]
    targets: np.ndarray | None = None  # precomputed smoothed error maps


def prepare_image(data: np.ndarray) -> np.ndarray:
    """Per-channel z-score."""
    x = np.asarray(data, dtype=np.float64)
    mean = x.mean(axis=(-3, -2, -1), keepdims=True)
    std = x.std(axis=(-3, -2, -1), keepdims=True)
    std[std == 0] = 1.0
    return ((x - mean) / std).astype(np.float32)


def _crop_start(rng, labels: np.ndarray, patch, tumor: Sequence[int], tumor_bias: float):
    dims = np.array(labels.shape)
    patch = np.array(patch)
    if np.any(patch > dims):
        raise ConfigError(f"patch {tuple(patch)} larger than volume {tuple(dims)}")
    span = dims - patch
    if rng.random() < tumor_bias:
        coords = np.argwhere(np.isin(labels, tumor))
        if len(coords):
            centre = coords[rng.integers(len(coords))]
            return np.clip(centre - patch // 2, 0, span)
    return np.array([rng.integers(s + 1) for s in span])


def sample_batch(
    rng: np.random.Generator,
    cases: Sequence[Case],
    cfg: TrainConfig,
    schema: LabelSchema,
    images: dict[int, np.ndarray],
    targets: dict[int, np.ndarray] | None = None,
) -> Batch:
    """Random crops; a ``tumor_bias`` share is centred on a tumor voxel."""
    tumor = sorted(schema.tumor_labels)
    imgs, labs, tgts, ids = [], [], [], []
    for _ in range(cfg.batch_size):
        case = cases[int(rng.integers(len(cases)))]
        lab = case.labels.labels
        s = _crop_start(rng, lab, cfg.patch_dims, tumor, cfg.tumor_bias)
        sl = tuple(slice(a, a + p) for a, p in zip(s, cfg.patch_dims))
        imgs.append(images[case.case_id][(slice(None),) + sl])
        labs.append(lab[sl])
        if targets is not None:
            tgts.append(targets[case.case_id][sl])
        ids.append(case.case_id)
    return Batch(np.stack(imgs), np.stack(labs), ids, np.stack(tgts) if targets is not None else None)


# -- training ----------------------------------------------------------------

def train_step(state: TrainState, batch: Batch, cfg: TrainConfig, schema: LabelSchema) -> tuple[TrainState, LossBreakdown]:
    """Forward, error-map target, combined loss, backward, one Adam update.

    The input state is not modified.
    """
    params = state.params
    out = forward(params, batch.images)
    tumor = schema.tumor_labels
    if batch.targets is None:
        target = box_smooth_array(error_array(out.argmax(), batch.labels, tumor))
    else:
        target = batch.targets
    mask = loss_mask(batch.labels, tumor, cfg.unc_loss_mask)
    breakdown, dlogits, dU = combined_loss_grad(
        out.seg_logits, batch.labels, out.unc_prob[:, 0], target, mask, cfg.effective_weights
    )
    if not np.isfinite(breakdown.total):
        raise DivergenceError(
            f"non-finite loss at epoch {state.epoch} step {state.step}: {breakdown}; "
            f"cases {batch.case_ids}; param norms "
            + ", ".join(f"{k}={float(np.linalg.norm(v)):.3g}" for k, v in params.items())
        )
    grads = backward(params, out, dlogits, dU)
    lr = np.float32(lr_at(state.epoch, cfg)) if params.cfg.dtype == "float32" else lr_at(state.epoch, cfg)
    step = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        new_p[name], new_m[name], new_v[name] = adam_update(p, grads[name], state.m[name], state.v[name], step, lr)
    new_state = TrainState(
        Parameters(params.cfg, new_p), new_m, new_v, step, state.epoch, state.history, state.rng_state
    )
    return new_state, breakdown


def refresh_targets(params: Parameters, cases: Sequence[Case], images: dict[int, np.ndarray], schema) -> dict[int, np.ndarray]:
    """Whole-volume smoothed error maps, for ``target_refresh='epoch'``."""
    targets = {}
    for case in cases:
        out = forward(params, images[case.case_id], keep_cache=False)
        targets[case.case_id] = box_smooth_array(error_array(out.argmax()[0], case.labels.labels, schema.tumor_labels))
    return targets


def validate(
    params: Parameters,
    cases: Sequence[Case],
    cfg: TrainConfig,
    schema: LabelSchema,
    images: dict[int, np.ndarray],
) -> list[CaseMetrics]:
    """Metrics on up to ``val_batches_per_epoch * batch_size`` validation cases, in id order."""
    chosen = sorted(cases, key=lambda c: c.case_id)[: cfg.val_batches_per_epoch * cfg.batch_size]
    results = []
    for i in range(0, len(chosen), cfg.batch_size):
        group = chosen[i:i + cfg.batch_size]
        out = forward(params, np.stack([images[c.case_id] for c in group]), keep_cache=False)
        pred = out.argmax()
        for j, case in enumerate(group):
            results.append(
                evaluate_case(
                    case.case_id,
                    LabelVolume(pred[j].astype(np.uint16), schema),
                    case.labels,
                    out.unc_prob[j, 0],
                    schema,
                    cfg.unc_loss_mask,
                )
            )
    return results


def check_schema(cfg: TrainConfig, schema: LabelSchema) -> None:
    wants = "whole_tumor" if cfg.run_kind.startswith("CM") else "tumor_all"
    if wants not in schema.groups:
        raise ConfigError(f"run kind {cfg.run_kind} needs a schema with a {wants} group; got {schema.schema_id!r}")


def metrics_columns(schema: LabelSchema) -> list[str]:
    return ["epoch", "lr", "dce", "rmsd", "corr", "total"] + [f"dsc_{g}" for g in schema.groups] + ["unc_rmsd", "unc_corr"]


def write_metrics_csv(path: Path, history: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in history:
            writer.writerow([row[c] if c == "epoch" else repr(float(row[c])) for c in columns])


def fit(
    cfg: TrainConfig,
    train: Sequence[Case],
    val: Sequence[Case],
    schema: LabelSchema,
    out_dir: str | os.PathLike | None = None,
    state: TrainState | None = None,
    on_epoch: Callable[[TrainState], None] | None = None,
) -> tuple[TrainState, RunSummary]:
    if not train or not val:
        raise ConfigError("fit needs non-empty training and validation sets")
    check_schema(cfg, schema)
    train_ids = {c.case_id for c in train}
    val_ids = {c.case_id for c in val}
    if train_ids & val_ids:
        raise ConfigError(f"cases {sorted(train_ids & val_ids)} are in both splits")
    in_channels = train[0].image.channels
    if state is None:
        state = initial_state(cfg, in_channels, schema)
    train = sorted(train, key=lambda c: c.case_id)
    images = {c.case_id: prepare_image(c.image.data) for c in list(train) + list(val)}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    columns = metrics_columns(schema)

    while state.epoch < cfg.epochs:
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng_state
        targets = refresh_targets(state.params, train, images, schema) if cfg.target_refresh == "epoch" else None
        lr = lr_at(state.epoch, cfg)
        losses = []
        for _ in range(cfg.train_batches_per_epoch):
            batch = sample_batch(rng, train, cfg, schema, images, targets)
            state, breakdown = train_step(state, batch, cfg, schema)
            losses.append(breakdown)
        assert not val_ids & {c.case_id for c in train}
        case_metrics = validate(state.params, val, cfg, schema, images)
        row = {"epoch": state.epoch, "lr": lr}
        for key in ("dce", "rmsd", "corr", "total"):
            row[key] = float(np.mean([getattr(b, key) for b in losses]))
        for key in columns[6:]:
            row[key] = float(np.mean([c.flat()[key] for c in case_metrics]))
        state = replace(state, epoch=state.epoch + 1, history=state.history + [row], rng_state=rng.bit_generator.state)
        log.info(
            "%s epoch %d/%d lr %.2e loss %.4f dsc %s unc_corr %.3f",
            cfg.run_kind, state.epoch, cfg.epochs, lr, row["total"],
            " ".join(f"{g}={row['dsc_' + g]:.3f}" for g in schema.groups), row["unc_corr"],
        )
        if out is not None:
            state.save(out / "checkpoints" / f"epoch_{state.epoch:03d}")
            write_metrics_csv(out / "metrics.csv", state.history, columns)
        if on_epoch is not None:
            on_epoch(state)

    summary = summarize_run([{k: r[k] for k in columns[1:]} for r in state.history], cfg.summary_window)
    if out is not None:
        with open(out / "summary.json", "w") as fh:
            json.dump(summary.to_json(), fh, indent=1)
            fh.write("\n")
        with open(out / "train_config.json", "w") as fh:
            json.dump(cfg.to_json(), fh, indent=1)
            fh.write("\n")
    return state, summary
