"""Volume containers, the VXV1 file format, slicing and label-mask algebra.

Arrays are indexed ``[i, j, k]`` (x, y, z); scalar grids carry a leading
channel axis, ``data[c, i, j, k]``.

VXV1 layout (little-endian)::

    magic "VXV1" | kind u8 | channels u32 | nx u32 | ny u32 | nz u32 | 3 zero bytes
    payload: channel-major, x fastest; f32 for kind 0, u16 for kind 1
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Union

import numpy as np

from .errors import BoundsError, DataError, FormatError, LengthError, ShapeError, SchemaError, UsageError

if TYPE_CHECKING:
    from .labelspace import LabelSchema

MAGIC = b"VXV1"
HEADER = struct.Struct("<4sBIIII3x")
KIND_SCALAR = 0
KIND_LABEL = 1

AXES = {"sagittal": 0, "coronal": 1, "axial": 2}


@dataclass(frozen=True)
class Dims:
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for n in (self.nx, self.ny, self.nz):
            if int(n) != n or n < 1:
                raise ShapeError(f"voxel counts must be positive integers, got {tuple(self)}")
        if self.nx * self.ny * self.nz >= 2**63:
            raise ShapeError("voxel count overflows 64 bits")

    def __iter__(self):
        return iter((self.nx, self.ny, self.nz))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @classmethod
    def of(cls, shape: Iterable[int]) -> "Dims":
        nx, ny, nz = (int(s) for s in shape)
        return cls(nx, ny, nz)


@dataclass(eq=False)
class VoxelGrid:
    """Multi-channel scalar field, ``data`` of shape (channels, nx, ny, nz)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise ShapeError(f"VoxelGrid data must be 4-D (c, x, y, z), got shape {data.shape}")
        if data.shape[0] < 1:
            raise ShapeError("VoxelGrid needs at least one channel")
        Dims.of(data.shape[1:])
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise DataError("VoxelGrid contains non-finite values")
        self.data = data

    @property
    def dims(self) -> Dims:
        return Dims.of(self.data.shape[1:])

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, VoxelGrid)
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(eq=False)
class LabelVolume:
    """Integer labels of shape (nx, ny, nz) over an optional schema."""

    labels: np.ndarray
    schema: "LabelSchema | None" = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ShapeError(f"LabelVolume must be 3-D, got shape {labels.shape}")
        Dims.of(labels.shape)
        if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
            raise DataError("labels must fit in an unsigned 16-bit integer")
        self.labels = labels.astype(np.uint16, copy=False)
        if self.schema is not None:
            present = set(np.unique(self.labels).tolist())
            unknown = present - set(self.schema.label_ids) - {0}
            if unknown:
                raise SchemaError(
                    f"labels {sorted(unknown)} are not in schema {self.schema.schema_id!r}"
                )

    @property
    def dims(self) -> Dims:
        return Dims.of(self.labels.shape)

    @property
    def schema_id(self) -> str | None:
        return None if self.schema is None else self.schema.schema_id

    def with_schema(self, schema: "LabelSchema") -> "LabelVolume":
        return LabelVolume(self.labels, schema)

    def __eq__(self, other):
        return (
            isinstance(other, LabelVolume)
            and self.labels.shape == other.labels.shape
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(eq=False)
class MaskVolume:
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 3:
            raise ShapeError(f"MaskVolume must be 3-D, got shape {mask.shape}")
        if mask.dtype == bool:
            mask = mask.astype(np.uint8)
        elif not np.all((mask == 0) | (mask == 1)):
            raise DataError("mask values must be exactly 0 or 1")
        self.mask = mask.astype(np.uint8, copy=False)

    @property
    def dims(self) -> Dims:
        return Dims.of(self.mask.shape)

    def count(self) -> int:
        return int(self.mask.sum(dtype=np.int64))

    def __eq__(self, other):
        return isinstance(other, MaskVolume) and np.array_equal(self.mask, other.mask)


Volume = Union[VoxelGrid, LabelVolume]


def _encode(volume: Volume) -> bytes:
    if isinstance(volume, VoxelGrid):
        kind, channels = KIND_SCALAR, volume.channels
        payload = np.ascontiguousarray(volume.data.astype("<f4").transpose(0, 3, 2, 1))
    elif isinstance(volume, LabelVolume):
        kind, channels = KIND_LABEL, 1
        payload = np.ascontiguousarray(volume.labels.astype("<u2").transpose(2, 1, 0))
    else:
        raise UsageError(f"cannot write {type(volume).__name__} as VXV1")
    if channels < 1:
        raise ShapeError("refusing to write a zero-channel volume")
    nx, ny, nz = volume.dims
    return HEADER.pack(MAGIC, kind, channels, nx, ny, nz) + payload.tobytes()


def write_vxv(volume: Volume, path: str | os.PathLike) -> None:
    blob = _encode(volume)
    with open(path, "wb") as fh:
        fh.write(blob)


def decode_vxv(blob: bytes) -> Volume:
    if len(blob) < HEADER.size:
        raise LengthError(f"file is {len(blob)} bytes, shorter than the {HEADER.size}-byte header")
    magic, kind, channels, nx, ny, nz = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if blob[21:24] != b"\0\0\0":
        raise FormatError("reserved header bytes must be zero")
    if kind not in (KIND_SCALAR, KIND_LABEL):
        raise FormatError(f"unknown volume kind {kind}")
    if channels < 1 or min(nx, ny, nz) < 1:
        raise FormatError(f"degenerate header: channels={channels} dims={(nx, ny, nz)}")
    if kind == KIND_LABEL and channels != 1:
        raise FormatError("label volumes have exactly one channel")
    dtype = np.dtype("<f4") if kind == KIND_SCALAR else np.dtype("<u2")
    count = channels * nx * ny * nz
    payload = blob[HEADER.size:]
    if len(payload) != count * dtype.itemsize:
        raise LengthError(
            f"header declares {count} values ({count * dtype.itemsize} bytes), "
            f"payload has {len(payload)} bytes"
        )
    flat = np.frombuffer(payload, dtype=dtype)
    if kind == KIND_SCALAR:
        if not np.all(np.isfinite(flat)):
            raise DataError("payload contains non-finite floats")
        data = flat.reshape(channels, nz, ny, nx).transpose(0, 3, 2, 1).astype(np.float32)
        return VoxelGrid(np.ascontiguousarray(data))
    labels = flat.reshape(nz, ny, nx).transpose(2, 1, 0).astype(np.uint16)
    return LabelVolume(np.ascontiguousarray(labels))


def read_vxv(path: str | os.PathLike) -> Volume:
    with open(path, "rb") as fh:
        return decode_vxv(fh.read())


def labels_to_mask(lv: LabelVolume, label_set: Iterable[int]) -> MaskVolume:
    label_set = {int(v) for v in label_set}
    if lv.schema is not None:
        unknown = label_set - set(lv.schema.label_ids) - {0}
        if unknown:
            raise SchemaError(f"label ids {sorted(unknown)} not in schema {lv.schema.schema_id!r}")
    if not label_set:
        return MaskVolume(np.zeros(lv.labels.shape, dtype=np.uint8))
    return MaskVolume(np.isin(lv.labels, sorted(label_set)))


def extract_slice(
    volume: VoxelGrid | LabelVolume | MaskVolume,
    axis: str,
    index: int,
    channel: int = 0,
) -> np.ndarray:
    """Copy one plane out of a volume.

    ``axial`` fixes k (z), ``coronal`` fixes j (y), ``sagittal`` fixes i (x).
    """
    if axis not in AXES:
        raise UsageError(f"axis must be one of {sorted(AXES)}, got {axis!r}")
    if isinstance(volume, VoxelGrid):
        arr = volume.data[channel]
    elif isinstance(volume, LabelVolume):
        arr = volume.labels
    elif isinstance(volume, MaskVolume):
        arr = volume.mask
    else:
        arr = np.asarray(volume)
    a = AXES[axis]
    extent = arr.shape[a]
    if not 0 <= index < extent:
        raise BoundsError(f"{axis} index {index} out of range [0, {extent})")
    return np.take(arr, index, axis=a).copy()
