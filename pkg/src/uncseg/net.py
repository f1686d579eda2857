"""Small 3D encoder-decoder with a segmentation head and an uncertainty head.

Activations are kept channel-first *across the batch*, ``(C, B, X, Y, Z)``,
so every convolution is one matrix product against an im2col buffer.

The uncertainty head reads the final decoder features in the forward pass,
but :func:`backward` never routes its gradient into those features: trunk
and segmentation-head gradients depend only on ``dseg_logits``.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import InputError, ShapeError, UsageError
from .voxvol import LabelVolume, VoxelGrid, read_vxv, write_vxv

PARTITIONS = ("trunk", "seg_head", "unc_head")


@dataclass(frozen=True)
class NetConfig:
    in_channels: int
    num_classes: int
    depth: int = 3
    base_width: int = 8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.depth < 1:
            raise UsageError("depth must be >= 1")
        if self.num_classes < 2:
            raise UsageError("num_classes must be >= 2 (background included)")
        if self.in_channels < 1 or self.base_width < 1:
            raise UsageError("in_channels and base_width must be positive")

    @property
    def widths(self) -> list[int]:
        return [self.base_width * 2**level for level in range(self.depth)]

    @property
    def multiple(self) -> int:
        """Spatial dims must be divisible by this."""
        return 2 ** (self.depth - 1)


def partition_of(name: str) -> str:
    return name.split(".", 1)[0]


@dataclass
class Parameters:
    cfg: NetConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self, *partitions: str) -> list[str]:
        return [n for n in self.tensors if not partitions or partition_of(n) in partitions]

    def copy(self) -> "Parameters":
        return Parameters(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Parameters":
        dtype = np.dtype(dtype)
        cfg = NetConfig(**{**asdict(self.cfg), "dtype": dtype.name})
        return Parameters(cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())


def _layout(cfg: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    w = cfg.widths
    shapes = [
        ("trunk.enc0.conv0", (w[0], cfg.in_channels, 3, 3, 3)),
        ("trunk.enc0.conv1", (w[0], w[0], 3, 3, 3)),
    ]
    for level in range(1, cfg.depth):
        shapes += [
            (f"trunk.down{level - 1}", (w[level], w[level - 1], 2, 2, 2)),
            (f"trunk.enc{level}.conv0", (w[level], w[level], 3, 3, 3)),
            (f"trunk.enc{level}.conv1", (w[level], w[level], 3, 3, 3)),
        ]
    for level in reversed(range(cfg.depth - 1)):
        shapes += [
            (f"trunk.dec{level}.up", (w[level], w[level + 1], 1, 1, 1)),
            (f"trunk.dec{level}.conv0", (w[level], 2 * w[level], 3, 3, 3)),
            (f"trunk.dec{level}.conv1", (w[level], w[level], 3, 3, 3)),
        ]
    shapes += [
        ("seg_head", (cfg.num_classes, w[0], 1, 1, 1)),
        ("unc_head", (1, w[0], 1, 1, 1)),
    ]
    return shapes


def init_params(cfg: NetConfig) -> Parameters:
    """He-normal weights for ReLU layers, LeCun-normal for the seg head, zero biases.

    The uncertainty head starts at zero (U = 0.5 everywhere): trunk features
    are unnormalised and grow to O(100), so any random start saturates the
    logistic and freezes the head.
    """
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    tensors = {}
    for name, shape in _layout(cfg):
        fan_in = int(np.prod(shape[1:]))
        gain = 1.0 if partition_of(name) != "trunk" or name.endswith(".up") else 2.0
        std = np.sqrt(gain / fan_in)
        tensors[f"{name}.w"] = (rng.standard_normal(shape) * std).astype(dtype)
        if name == "unc_head":
            tensors[f"{name}.w"][...] = 0
        tensors[f"{name}.b"] = np.zeros(shape[0], dtype=dtype)
    return Parameters(cfg, tensors)


# -- layer primitives --------------------------------------------------------

def _conv3_fwd(h, w, b):
    cols = kernels.im2col3(h)
    C, B, X, Y, Z = h.shape
    out = w.reshape(w.shape[0], -1) @ cols.reshape(C * 27, -1)
    out += b[:, None]
    return out.reshape(w.shape[0], B, X, Y, Z), cols


def _conv3_bwd(dout, w, cols):
    cout = w.shape[0]
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.reshape(cols.shape[0] * 27, -1).T).reshape(w.shape)
    db = d2.sum(axis=1)
    dcols = w.reshape(cout, -1).T @ d2
    return kernels.col2im3(dcols.reshape(cols.shape)), dw, db


def _down_cols(h):
    C, B, X, Y, Z = h.shape
    v = h.reshape(C, B, X // 2, 2, Y // 2, 2, Z // 2, 2).transpose(0, 3, 5, 7, 1, 2, 4, 6)
    return np.ascontiguousarray(v).reshape(C * 8, B * (X // 2) * (Y // 2) * (Z // 2))


def _down_fwd(h, w, b):
    C, B, X, Y, Z = h.shape
    cols = _down_cols(h)
    out = w.reshape(w.shape[0], -1) @ cols
    out += b[:, None]
    return out.reshape(w.shape[0], B, X // 2, Y // 2, Z // 2), cols


def _down_bwd(dout, w, cols, in_shape):
    C, B, X, Y, Z = in_shape
    cout = w.shape[0]
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dcols = (w.reshape(cout, -1).T @ d2).reshape(C, 2, 2, 2, B, X // 2, Y // 2, Z // 2)
    dx = dcols.transpose(0, 4, 5, 1, 6, 2, 7, 3).reshape(in_shape)
    return np.ascontiguousarray(dx), dw, db


def _pointwise_fwd(h, w, b):
    C, B, X, Y, Z = h.shape
    out = w.reshape(w.shape[0], C) @ h.reshape(C, -1)
    out += b[:, None]
    return out.reshape(w.shape[0], B, X, Y, Z)


def _pointwise_bwd(dout, w, h, need_dx=True):
    cout, cin = w.shape[0], w.shape[1]
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ h.reshape(cin, -1).T).reshape(w.shape)
    db = d2.sum(axis=1)
    dx = (w.reshape(cout, cin).T @ d2).reshape(h.shape) if need_dx else None
    return dx, dw, db


def _upsample(h):
    C, B, X, Y, Z = h.shape
    v = np.broadcast_to(h[:, :, :, None, :, None, :, None], (C, B, X, 2, Y, 2, Z, 2))
    return v.reshape(C, B, 2 * X, 2 * Y, 2 * Z)


def _upsample_bwd(d):
    C, B, X, Y, Z = d.shape
    return d.reshape(C, B, X // 2, 2, Y // 2, 2, Z // 2, 2).sum(axis=(3, 5, 7))


def logistic(z):
    u = expit(z)
    tiny = np.finfo(u.dtype).eps
    return np.clip(u, tiny, 1.0 - tiny)


# -- forward / backward ------------------------------------------------------

@dataclass
class NetOutput:
    """Network outputs in batch-first layout ``(B, C, X, Y, Z)``."""

    seg_logits: np.ndarray
    unc_logit: np.ndarray
    unc_prob: np.ndarray
    features: np.ndarray  # final decoder map, (C, B, X, Y, Z)
    cache: dict | None = None
    params_ref: Parameters | None = None

    def seg_grid(self, b: int = 0) -> VoxelGrid:
        return VoxelGrid(self.seg_logits[b])

    def unc_grid(self, b: int = 0) -> VoxelGrid:
        return VoxelGrid(self.unc_prob[b])

    def argmax(self) -> np.ndarray:
        return np.argmax(self.seg_logits, axis=1)


def _as_batch(image, cfg: NetConfig) -> np.ndarray:
    if isinstance(image, VoxelGrid):
        x = image.data[None]
    else:
        x = np.asarray(image)
        if x.ndim == 4:
            x = x[None]
    if x.ndim != 5:
        raise ShapeError(f"expected (B, C, X, Y, Z) input, got shape {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, network expects {cfg.in_channels}")
    m = cfg.multiple
    if any(s % m for s in x.shape[2:]):
        raise ShapeError(f"spatial dims {x.shape[2:]} must be divisible by {m}")
    return x


def unc_head(params: Parameters, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Uncertainty logit and probability, batch-first, from a ``(C, B, X, Y, Z)`` feature map.

    Callers that must not let uncertainty gradients reach the trunk pass
    features computed (and frozen) elsewhere.
    """
    z = _pointwise_fwd(features, params.tensors["unc_head.w"], params.tensors["unc_head.b"])
    z = np.ascontiguousarray(z.transpose(1, 0, 2, 3, 4))
    return z, np.ascontiguousarray(logistic(z))


def forward(params: Parameters, image, keep_cache: bool = True) -> NetOutput:
    cfg = params.cfg
    x = _as_batch(image, cfg)
    dtype = np.dtype(cfg.dtype)
    h = np.ascontiguousarray(x.transpose(1, 0, 2, 3, 4), dtype=dtype)
    P = params.tensors
    cache: dict = {}
    skips = []

    def conv_relu(name, h):
        out, cols = _conv3_fwd(h, P[f"{name}.w"], P[f"{name}.b"])
        np.maximum(out, 0, out=out)
        if keep_cache:
            cache[name] = (cols, out)
        return out

    h = conv_relu("trunk.enc0.conv0", h)
    h = conv_relu("trunk.enc0.conv1", h)
    for level in range(1, cfg.depth):
        skips.append(h)
        name = f"trunk.down{level - 1}"
        in_shape = h.shape
        h, cols = _down_fwd(h, P[f"{name}.w"], P[f"{name}.b"])
        np.maximum(h, 0, out=h)
        if keep_cache:
            cache[name] = (cols, h, in_shape)
        h = conv_relu(f"trunk.enc{level}.conv0", h)
        h = conv_relu(f"trunk.enc{level}.conv1", h)
    for level in reversed(range(cfg.depth - 1)):
        name = f"trunk.dec{level}.up"
        # 1x1x1 projection commutes with nearest upsampling; project on the coarse grid
        coarse = _pointwise_fwd(h, P[f"{name}.w"], P[f"{name}.b"])
        if keep_cache:
            cache[name] = (h,)
        h = np.concatenate([_upsample(coarse), skips[level]], axis=0)
        h = conv_relu(f"trunk.dec{level}.conv0", h)
        h = conv_relu(f"trunk.dec{level}.conv1", h)
    features = h
    seg = _pointwise_fwd(features, P["seg_head.w"], P["seg_head.b"])
    unc_logit, unc_prob = unc_head(params, features)
    return NetOutput(
        seg_logits=np.ascontiguousarray(seg.transpose(1, 0, 2, 3, 4)),
        unc_logit=unc_logit,
        unc_prob=unc_prob,
        features=features,
        cache=cache if keep_cache else None,
        params_ref=params,
    )


def backward(
    params: Parameters,
    out: NetOutput,
    dseg_logits: np.ndarray | None,
    dunc_prob: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Gradients for every parameter given dL/d(seg_logits) and dL/d(unc_prob).

    ``dunc_prob`` reaches the uncertainty head only; the features it reads
    are treated as constants.
    """
    if out.cache is None:
        raise UsageError("backward needs a forward pass run with keep_cache=True")
    if out.params_ref is not params:
        raise UsageError("forward state was produced by different parameters")
    cfg = params.cfg
    dtype = np.dtype(cfg.dtype)
    P = params.tensors
    cache = out.cache
    grads = {name: np.zeros_like(v) for name, v in P.items()}
    feats = out.features

    if dunc_prob is not None:
        u = out.unc_prob
        dz = (np.asarray(dunc_prob, dtype=dtype).reshape(u.shape) * u * (1 - u)).astype(dtype)
        dz = np.ascontiguousarray(dz.transpose(1, 0, 2, 3, 4))
        _, dw, db = _pointwise_bwd(dz, P["unc_head.w"], feats, need_dx=False)
        grads["unc_head.w"], grads["unc_head.b"] = dw, db

    if dseg_logits is None:
        return grads
    ds = np.ascontiguousarray(np.asarray(dseg_logits, dtype=dtype).transpose(1, 0, 2, 3, 4))
    dh, dw, db = _pointwise_bwd(ds, P["seg_head.w"], feats)
    grads["seg_head.w"], grads["seg_head.b"] = dw, db

    def conv_relu_bwd(name, dh):
        cols, act = cache[name]
        dh = dh * (act > 0)
        dx, dw, db = _conv3_bwd(dh, P[f"{name}.w"], cols)
        grads[f"{name}.w"], grads[f"{name}.b"] = dw, db
        return dx

    dskips = {}
    for level in range(cfg.depth - 1):
        dh = conv_relu_bwd(f"trunk.dec{level}.conv1", dh)
        dh = conv_relu_bwd(f"trunk.dec{level}.conv0", dh)
        w_up = P[f"trunk.dec{level}.up.w"].shape[0]
        dskips[level] = dh[w_up:]
        (h_coarse,) = cache[f"trunk.dec{level}.up"]
        dh, dw, db = _pointwise_bwd(_upsample_bwd(dh[:w_up]), P[f"trunk.dec{level}.up.w"], h_coarse)
        grads[f"trunk.dec{level}.up.w"], grads[f"trunk.dec{level}.up.b"] = dw, db
    for level in reversed(range(1, cfg.depth)):
        dh = conv_relu_bwd(f"trunk.enc{level}.conv1", dh)
        dh = conv_relu_bwd(f"trunk.enc{level}.conv0", dh)
        name = f"trunk.down{level - 1}"
        cols, act, in_shape = cache[name]
        dh, dw, db = _down_bwd(dh * (act > 0), P[f"{name}.w"], cols, in_shape)
        grads[f"{name}.w"], grads[f"{name}.b"] = dw, db
        dh += dskips[level - 1]
    dh = conv_relu_bwd("trunk.enc0.conv1", dh)
    conv_relu_bwd("trunk.enc0.conv0", dh)
    return grads


def predict(params: Parameters, image) -> tuple[LabelVolume, VoxelGrid]:
    """Argmax labels and uncertainty probability for one image."""
    out = forward(params, image, keep_cache=False)
    labels = LabelVolume(out.argmax()[0].astype(np.uint16))
    return labels, VoxelGrid(out.unc_prob[0])


# -- checkpoints -------------------------------------------------------------

def _tensor_file(prefix: str, name: str) -> str:
    return f"{prefix}_{name.replace('.', '_')}.vxv"


def save_tensors(tensors: dict[str, np.ndarray], directory: str | os.PathLike, index_name: str) -> None:
    """Write each tensor as a 1-channel VXV1 volume plus a JSON index.

    VXV1 stores f32, so only float32 tensors round-trip bit-exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    prefix = Path(index_name).stem
    for name, arr in tensors.items():
        fname = _tensor_file(prefix, name)
        flat = np.asarray(arr, dtype=np.float32).reshape(1, -1, 1, 1)
        write_vxv(VoxelGrid(flat), directory / fname)
        index[name] = {"file": fname, "partition": partition_of(name), "shape": list(arr.shape)}
    with open(directory / index_name, "w") as fh:
        json.dump(index, fh, indent=1)
        fh.write("\n")


def load_tensors(directory: str | os.PathLike, index_name: str) -> dict[str, np.ndarray]:
    directory = Path(directory)
    try:
        with open(directory / index_name) as fh:
            index = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"missing checkpoint index {directory / index_name}") from None
    tensors = {}
    for name, entry in index.items():
        grid = read_vxv(directory / entry["file"])
        tensors[name] = grid.data.reshape(entry["shape"]).copy()
    return tensors


def save_params(params: Parameters, directory: str | os.PathLike) -> None:
    directory = Path(directory)
    save_tensors(params.tensors, directory, "params.json")
    with open(directory / "net_config.json", "w") as fh:
        json.dump(asdict(params.cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_params(directory: str | os.PathLike) -> Parameters:
    directory = Path(directory)
    try:
        with open(directory / "net_config.json") as fh:
            cfg = NetConfig(**json.load(fh))
    except FileNotFoundError:
        raise InputError(f"missing {directory / 'net_config.json'}") from None
    tensors = load_tensors(directory, "params.json")
    expected = [f"{n}.{s}" for n, _ in _layout(cfg) for s in ("w", "b")]
    if sorted(tensors) != sorted(expected):
        raise InputError(f"checkpoint tensors in {directory} do not match the network layout")
    return Parameters(cfg, {n: tensors[n].astype(cfg.dtype) for n in expected})
