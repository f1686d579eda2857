"""Deterministic geometric brain phantoms with labelled tumors.

Anatomy is an ellipsoidal brain split into radial shells; each shell is cut
into angular sectors (intersections of half-spaces through the vertical
axis) that carry the schema's cortical and subcortical labels. Tumors are
spheres: necrotic core inside an enhancing rim inside an edema halo, or a
single tumor label when the schema has no subregions.

Every tissue class has its own mean intensity per modality. Means sit on a
grid of ``intensity_step`` and the default noise is a third of that, so
classes are separable but not trivially so. A non-zero ``tumor_contrast``
lifts tumor tissues that many extra steps in the first modality.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .labelspace import LabelSchema, builtin_schema, load_schema, save_schema
from .voxvol import Dims, LabelVolume, VoxelGrid, read_vxv, write_vxv

CM_HEALTHY_SHELLS = (0.65, 0.88)  # white matter | gray matter | csf boundaries
CORTEX_INNER = 0.70
SUBCORTICAL_CORE = 0.38
EDEMA_SCALE = 1.5
CORE_SCALE = 0.5


@dataclass(frozen=True)
class PhantomConfig:
    dims: Dims = Dims(32, 32, 32)
    schema: LabelSchema = field(default_factory=lambda: builtin_schema("CM"))
    modalities: int | None = None
    tumor_count_range: tuple[int, int] = (1, 2)
    tumor_radius_range: tuple[float, float] = (3.0, 5.0)
    noise_sigma: float = 0.3
    intensity_step: float = 1.0
    tumor_contrast: float = 0.0
    tumor_structure: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.modalities is None:
            default = 1 if "tumor_all" in self.schema.groups else 4
            object.__setattr__(self, "modalities", default)
        if self.modalities < 1:
            raise ConfigError("modalities must be >= 1")
        lo, hi = self.tumor_count_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad tumor_count_range {self.tumor_count_range}")
        rlo, rhi = self.tumor_radius_range
        if not 0 < rlo <= rhi:
            raise ConfigError(f"tumor radii must be positive and ordered, got {self.tumor_radius_range}")
        if 2 * EDEMA_SCALE * rhi > 0.8 * min(self.dims):
            raise ConfigError(f"tumor radius {rhi} does not fit inside dims {self.dims.shape}")
        if self.tumor_contrast < 0:
            raise ConfigError("tumor_contrast must be non-negative")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        structure = self.tumor_structure or _infer_structure(self.schema)
        if structure not in ("subregions", "single"):
            raise ConfigError(f"unknown tumor_structure {structure!r}")
        _tumor_labels(self.schema, structure)
        object.__setattr__(self, "tumor_structure", structure)

    def with_seed(self, seed: int) -> "PhantomConfig":
        return replace(self, seed=seed)

    def to_json(self) -> dict:
        return {
            "dims": list(self.dims),
            "schema": self.schema.schema_id,
            "modalities": self.modalities,
            "tumor-count-range": list(self.tumor_count_range),
            "tumor-radius-range": list(self.tumor_radius_range),
            "noise-sigma": self.noise_sigma,
            "intensity-step": self.intensity_step,
            "tumor-contrast": self.tumor_contrast,
            "tumor-structure": self.tumor_structure,
            "seed": self.seed,
        }


def _infer_structure(schema: LabelSchema) -> str:
    if "tumor_all" in schema.groups:
        return "single"
    if "whole_tumor" in schema.groups:
        return "subregions"
    raise ConfigError(f"schema {schema.schema_id!r} has no tumor group to synthesise")


def _single(ids, what) -> int:
    ids = sorted(ids)
    if len(ids) != 1:
        raise ConfigError(f"{what} must resolve to exactly one label, got {ids}")
    return ids[0]


def _tumor_labels(schema: LabelSchema, structure: str) -> tuple[int, ...]:
    """(core, rim, halo) for subregions; (tumor,) for a single label."""
    g = schema.groups
    if structure == "single":
        if "tumor_all" not in g:
            raise ConfigError(f"single-label tumors need a tumor_all group in schema {schema.schema_id!r}")
        return (_single(g["tumor_all"], "tumor_all"),)
    if not {"whole_tumor", "tumor_core", "enhancing_tumor"} <= set(g):
        raise ConfigError(
            f"tumor subregions need whole_tumor/tumor_core/enhancing_tumor groups; "
            f"schema {schema.schema_id!r} has {sorted(g)}"
        )
    rim = _single(g["enhancing_tumor"], "enhancing_tumor")
    core = _single(g["tumor_core"] - g["enhancing_tumor"], "necrotic core")
    halo = _single(g["whole_tumor"] - g["tumor_core"], "edema")
    return core, rim, halo


def _healthy_layout(schema: LabelSchema) -> list[tuple[float, float, list[int]]]:
    """Shells (inner, outer, sector labels) in normalised brain radius."""
    cortical = sorted(schema.groups.get("cortical", ()))
    subcortical = sorted(schema.groups.get("subcortical", ()))
    if not cortical and not subcortical:
        return []
    shells = []
    if cortical:
        shells.append((CORTEX_INNER, 1.0, cortical))
    if subcortical:
        n_core = len(subcortical) // 3
        outer = subcortical[n_core:]
        inner_edge = SUBCORTICAL_CORE if n_core else 0.0
        shells.append((inner_edge, CORTEX_INNER if cortical else 1.0, outer))
        if n_core:
            shells.append((0.0, SUBCORTICAL_CORE, subcortical[:n_core]))
    return shells


def tissue_classes(cfg: PhantomConfig) -> list[tuple[str, int]]:
    """(tissue name, label) pairs; index 0 is air outside the brain."""
    schema = cfg.schema
    tissues = [("air", 0)]
    layout = _healthy_layout(schema)
    if layout:
        for _, _, labels in layout:
            tissues += [(schema.name_of(lab), lab) for lab in labels]
    else:
        tissues += [("white_matter", 0), ("gray_matter", 0), ("csf", 0)]
    for lab in _tumor_labels(schema, cfg.tumor_structure):
        tissues.append((schema.name_of(lab), lab))
    return tissues


def intensity_table(cfg: PhantomConfig) -> np.ndarray:
    """Mean intensity per (tissue, modality); air is 0 in every modality.

    Modality 0 orders tissues as listed, with tumor tissues lifted a further
    ``tumor_contrast`` steps; the others use fixed permutations so that every
    pair of tissues differs by at least one step in every channel.
    """
    tissues = tissue_classes(cfg)
    n = len(tissues)
    n_tumor = len(_tumor_labels(cfg.schema, cfg.tumor_structure))
    table = np.zeros((n, cfg.modalities))
    table[:, 0] = np.arange(n)
    table[n - n_tumor:, 0] += cfg.tumor_contrast
    for m in range(1, cfg.modalities):
        perm = np.random.default_rng(9973 + m).permutation(n - 1) + 1
        table[1:, m] = perm
    return table * cfg.intensity_step


@dataclass
class Case:
    case_id: int
    seed: int
    image: VoxelGrid
    labels: LabelVolume


def generate_phantom(cfg: PhantomConfig) -> tuple[VoxelGrid, LabelVolume]:
    rng = np.random.default_rng(cfg.seed)
    dims = np.array(cfg.dims.shape, dtype=np.float64)
    center = dims / 2 - 0.5 + rng.uniform(-1, 1, 3) * 0.05 * dims
    radii = dims * rng.uniform(0.40, 0.45, 3)
    twist = rng.uniform(-0.15, 0.15)

    grid = np.indices(cfg.dims.shape, dtype=np.float64)
    rel = grid - center[:, None, None, None]
    rho = np.sqrt(((rel / radii[:, None, None, None]) ** 2).sum(axis=0))
    brain = rho <= 1.0
    frac = ((np.arctan2(rel[1], rel[0]) + twist + math.pi) / (2 * math.pi)) % 1.0

    tissues = tissue_classes(cfg)
    tissue = np.zeros(cfg.dims.shape, dtype=np.int32)
    layout = _healthy_layout(cfg.schema)
    if layout:
        t = 1
        for inner, outer, labels in layout:
            shell = brain & (rho > inner) & (rho <= outer) if inner > 0 else brain & (rho <= outer)
            sector = np.minimum((frac * len(labels)).astype(np.int32), len(labels) - 1)
            tissue[shell] = t + sector[shell]
            t += len(labels)
    else:
        wm, gm = CM_HEALTHY_SHELLS
        tissue[brain] = np.where(rho[brain] <= wm, 1, np.where(rho[brain] <= gm, 2, 3))
    first_tumor = len(tissues) - (3 if cfg.tumor_structure == "subregions" else 1)

    lo, hi = cfg.tumor_count_range
    count = int(rng.integers(lo, hi + 1))
    layers = []  # (priority, region, tissue index)
    for _ in range(count):
        r = rng.uniform(*cfg.tumor_radius_range)
        limit = max(0.1, 1.0 - EDEMA_SCALE * r / radii.min())
        while True:
            c = center + rng.uniform(-1, 1, 3) * radii * limit
            if np.sqrt((((c - center) / radii) ** 2).sum()) <= limit:
                break
        dist = np.sqrt(((grid - c[:, None, None, None]) ** 2).sum(axis=0))
        seed_voxel = tuple(np.clip(np.rint(c).astype(int), 0, dims.astype(int) - 1))
        if cfg.tumor_structure == "subregions":
            layers.append((0, dist < EDEMA_SCALE * r, first_tumor + 2))
            layers.append((1, dist < r, first_tumor + 1))
            core = dist < CORE_SCALE * r
            core[seed_voxel] = True
            layers.append((2, core, first_tumor))
        else:
            whole = dist < EDEMA_SCALE * r
            whole[seed_voxel] = True
            layers.append((0, whole, first_tumor))
    for _, region, t in sorted(layers, key=lambda item: item[0]):
        tissue[region & brain] = t

    label_of = np.array([lab for _, lab in tissues], dtype=np.uint16)
    labels = LabelVolume(label_of[tissue], cfg.schema)
    means = intensity_table(cfg)
    image = means[tissue].transpose(3, 0, 1, 2)
    if cfg.noise_sigma > 0:
        image = image + rng.standard_normal(image.shape) * cfg.noise_sigma
    return VoxelGrid(image.astype(np.float32)), labels


def split_sizes(n_cases: int, split_fraction: float) -> tuple[int, int]:
    if not 0 < split_fraction < 1:
        raise ConfigError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    if n_cases < 2:
        raise ConfigError("need at least two cases for a train/validation split")
    n_val = int(math.floor(split_fraction * n_cases + 0.5))
    if n_val < 1 or n_val >= n_cases:
        raise ConfigError(f"{n_cases} cases at split {split_fraction} leave an empty side")
    return n_cases - n_val, n_val


def generate_dataset(cfg: PhantomConfig, n_cases: int, split_fraction: float = 0.2) -> tuple[list[Case], list[Case]]:
    """Cases ``seed + i``; the last ``round(split_fraction * n_cases)`` are validation."""
    n_train, _ = split_sizes(n_cases, split_fraction)
    cases = []
    for i in range(n_cases):
        image, labels = generate_phantom(cfg.with_seed(cfg.seed + i))
        cases.append(Case(i, cfg.seed + i, image, labels))
    return cases[:n_train], cases[n_train:]


# -- on-disk datasets --------------------------------------------------------

def case_paths(root: Path, case_id: int) -> tuple[Path, Path]:
    return root / f"case_{case_id:04d}_img.vxv", root / f"case_{case_id:04d}_lab.vxv"


def write_dataset(
    out_dir: str | os.PathLike,
    cfg: PhantomConfig,
    train: list[Case],
    val: list[Case],
    split_fraction: float,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, cases in (("train", train), ("val", val)):
        for case in cases:
            img, lab = case_paths(out, case.case_id)
            write_vxv(case.image, img)
            write_vxv(case.labels, lab)
            entries.append({"id": case.case_id, "seed": case.seed, "split": split, "image": img.name, "labels": lab.name})
    save_schema(cfg.schema, out / "schema.json")
    manifest = {
        "schema_id": cfg.schema.schema_id,
        "schema_file": "schema.json",
        "seed": cfg.seed,
        "split_fraction": split_fraction,
        "n_cases": len(entries),
        "train": [c.case_id for c in train],
        "val": [c.case_id for c in val],
        "phantom": cfg.to_json(),
        "cases": entries,
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_dataset(data_dir: str | os.PathLike) -> tuple[list[Case], list[Case], LabelSchema, dict]:
    root = Path(data_dir)
    try:
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"no manifest.json in {root}") from None
    schema = load_schema(root / manifest.get("schema_file", "schema.json"))
    train, val = [], []
    for entry in manifest["cases"]:
        for key in ("image", "labels"):
            if not (root / entry[key]).exists():
                raise InputError(f"missing case file {root / entry[key]}")
        image = read_vxv(root / entry["image"])
        labels = read_vxv(root / entry["labels"]).with_schema(schema)
        case = Case(int(entry["id"]), int(entry["seed"]), image, labels)
        (train if entry["split"] == "train" else val).append(case)
    return train, val, schema, manifest
