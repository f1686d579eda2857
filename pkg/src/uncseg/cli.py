"""Command-line entry point: ``uncseg synth|train|eval|target|render``.

Exit status: 0 success, 1 usage or configuration error, 2 bad input data.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, UncsegError, UsageError
from .labelspace import LabelSchema, load_schema
from .metrics import evaluate_case, mean_metrics
from .net import forward, load_params
from .render import render_case, write_case_dir
from .synthdata import PhantomConfig, generate_dataset, load_dataset, write_dataset
from .trainer import TrainConfig, TrainState, fit, prepare_image
from .unctarget import uncertainty_target
from .voxvol import AXES, Dims, LabelVolume, VoxelGrid, read_vxv, write_vxv

log = logging.getLogger("uncseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

SYNTH_KEYS = {
    "dims", "schema", "modalities", "tumor-count-range", "tumor-radius-range", "noise-sigma",
    "intensity-step", "tumor-contrast", "tumor-structure", "seed", "n-cases", "split-fraction", "out",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def _schema(ref: str) -> LabelSchema:
    try:
        return load_schema(ref)
    except FileNotFoundError:
        raise ConfigError(f"schema {ref!r} is neither CM, UM nor a readable file") from None


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    doc = _read_config(args.config)
    unknown = set(doc) - SYNTH_KEYS
    if unknown:
        raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
    out = args.out or doc.get("out")
    if out is None:
        raise UsageError("synth needs an output directory (--out or 'out' in the config)")
    schema = _schema(doc.get("schema", "CM"))
    try:
        cfg = PhantomConfig(
            dims=Dims.of(doc.get("dims", (32, 32, 32))),
            schema=schema,
            modalities=doc.get("modalities"),
            tumor_count_range=tuple(doc.get("tumor-count-range", (1, 2))),
            tumor_radius_range=tuple(float(r) for r in doc.get("tumor-radius-range", (3.0, 5.0))),
            noise_sigma=float(doc.get("noise-sigma", 0.3)),
            intensity_step=float(doc.get("intensity-step", 1.0)),
            tumor_contrast=float(doc.get("tumor-contrast", 8.0)),
            tumor_structure=doc.get("tumor-structure"),
            seed=int(doc.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth config: {exc}") from None
    n_cases = int(doc.get("n-cases", 40))
    split = float(doc.get("split-fraction", 0.2))
    if n_cases < 2 or not 0 < split < 1:
        raise ConfigError("n-cases must be >= 2 and split-fraction in (0, 1)")
    train, val = generate_dataset(cfg, n_cases, split)
    path = write_dataset(out, cfg, train, val, split)
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _read_config(args.config)
    data = args.data or doc.get("data")
    out = args.out or doc.get("out")
    if data is None or out is None:
        raise UsageError("train needs a dataset (--data) and an output directory (--out)")
    cfg = TrainConfig.from_json({k: v for k, v in doc.items() if k not in ("data", "out")})
    train, val, schema, _ = load_dataset(data)
    state = TrainState.load(args.resume) if args.resume else None
    _, summary = fit(cfg, train, val, schema, out_dir=out, state=state)
    print(json.dumps(summary.final, sort_keys=True))
    return EXIT_OK


def _checkpoint_dir(path: str) -> Path:
    p = Path(path)
    if (p / "checkpoints").is_dir():
        latest = sorted((p / "checkpoints").iterdir())
        if not latest:
            raise DataError(f"{p} has no checkpoints")
        p = latest[-1]
    if not (p / "params.json").exists():
        raise DataError(f"{p} is not a checkpoint directory")
    return p


def cmd_eval(args) -> int:
    params = load_params(_checkpoint_dir(args.checkpoint))
    train, val, schema, _ = load_dataset(args.data)
    cases = {"val": val, "train": train, "all": train + val}[args.split]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for case in sorted(cases, key=lambda c: c.case_id):
        res = forward(params, prepare_image(case.image.data)[None], keep_cache=False)
        pred = LabelVolume(res.argmax()[0].astype(np.uint16), schema)
        unc = VoxelGrid(res.unc_prob[0])
        name = f"case_{case.case_id:04d}"
        write_case_dir(out / name, case.labels, pred, unc)
        results.append(evaluate_case(name, pred, case.labels, unc, schema, args.mask))
    columns = ["case_id"] + list(results[0].flat())
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in results:
            writer.writerow([r.case_id] + [repr(float(v)) for v in r.flat().values()])
    summary = {"n_cases": len(results), "mean": mean_metrics(results)}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    print(json.dumps(summary["mean"], sort_keys=True))
    return EXIT_OK


def cmd_target(args) -> int:
    schema = _schema(args.schema)
    pred, gt = read_vxv(args.pred), read_vxv(args.gt)
    if not isinstance(pred, LabelVolume) or not isinstance(gt, LabelVolume):
        raise DataError("target needs two label volumes")
    target = uncertainty_target(pred.with_schema(schema), gt.with_schema(schema), schema.tumor_labels)
    write_vxv(target.to_grid(), args.out)
    return EXIT_OK


def cmd_render(args) -> int:
    schema = _schema(args.schema)
    axes = args.axes.split(",")
    bad = [a for a in axes if a not in AXES]
    if bad:
        raise UsageError(f"unknown axes {bad}; choose from {sorted(AXES)}")
    for path in render_case(args.case, args.out, axes, schema, args.index, args.overlay_mask):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uncseg", description="Uncertainty-aware 3-D tumor segmentation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", help="generate a phantom dataset")
    p.add_argument("--config", help="JSON file with phantom settings")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a network on a phantom dataset")
    p.add_argument("--config", help="JSON file with training settings")
    p.add_argument("--data", help="dataset directory (overrides the config)")
    p.add_argument("--out", help="run directory (overrides the config)")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="predict and score a dataset split")
    p.add_argument("--checkpoint", required=True, help="checkpoint or run directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", choices=("val", "train", "all"), default="val")
    p.add_argument("--mask", choices=("tumor", "dilated", "global"), default="tumor")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("target", help="compute the smoothed error map of a prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--schema", default="CM", help="CM, UM or a schema JSON file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_target)

    p = sub.add_parser("render", help="write PPM slice panels for one evaluated case")
    p.add_argument("--case", required=True, help="directory holding gt.vxv, pred.vxv, unc.vxv")
    p.add_argument("--out", required=True)
    p.add_argument("--axes", default="axial", help="comma-separated: axial,coronal,sagittal")
    p.add_argument("--index", type=int, help="slice index (default: central)")
    p.add_argument("--schema", default="CM", help="CM, UM or a schema JSON file")
    p.add_argument("--overlay-mask", action="store_true", help="only tint tumor-labelled pixels")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except UncsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


cli_main = main


if __name__ == "__main__":
    sys.exit(main())
