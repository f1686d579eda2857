"""Label schemas for the cancer-only (CM) and unified (UM) label spaces."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .errors import SchemaError

BACKGROUND = 0

GROUP_NAMES = (
    "whole_tumor",
    "tumor_core",
    "enhancing_tumor",
    "tumor_all",
    "cortical",
    "subcortical",
    "whole_brain",
)
# Groups scored as the unweighted mean of per-label DSC rather than as one union mask.
LABEL_MEAN_GROUPS = frozenset({"cortical", "subcortical", "whole_brain"})
TUMOR_GROUPS = ("whole_tumor", "tumor_all")

NECROTIC_CORE = 1
EDEMA = 2
ENHANCING_TUMOR = 3


@dataclass(frozen=True)
class LabelSchema:
    schema_id: str
    entries: tuple[tuple[int, str], ...]
    groups: Mapping[str, frozenset[int]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [int(i) for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"duplicate label ids in schema {self.schema_id!r}")
        if any(i < 0 or i > 0xFFFF for i in ids):
            raise SchemaError("label ids must fit in an unsigned 16-bit integer")
        known = set(ids)
        groups = {}
        for name, members in self.groups.items():
            members = frozenset(int(m) for m in members)
            if not members:
                raise SchemaError(f"group {name!r} is empty")
            if BACKGROUND in members:
                raise SchemaError(f"background cannot be a member of group {name!r}")
            if not members <= known:
                raise SchemaError(f"group {name!r} references unknown labels {sorted(members - known)}")
            groups[name] = members
        object.__setattr__(self, "entries", tuple((int(i), str(n)) for i, n in self.entries))
        object.__setattr__(self, "groups", MappingProxyType(groups))

    @property
    def label_ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.entries)

    @property
    def foreground_ids(self) -> tuple[int, ...]:
        return tuple(i for i in self.label_ids if i != BACKGROUND)

    @property
    def num_classes(self) -> int:
        """Network output classes: background plus every foreground label."""
        return max(self.label_ids + (BACKGROUND,)) + 1

    def name_of(self, label: int) -> str:
        for i, n in self.entries:
            if i == label:
                return n
        raise SchemaError(f"label {label} not in schema {self.schema_id!r}")

    @property
    def tumor_group(self) -> str:
        for name in TUMOR_GROUPS:
            if name in self.groups:
                return name
        raise SchemaError(f"schema {self.schema_id!r} declares no tumor group")

    @property
    def tumor_labels(self) -> frozenset[int]:
        return self.groups[self.tumor_group]

    def to_json(self) -> dict:
        return {
            "schema_id": self.schema_id,
            "entries": [[i, n] for i, n in self.entries],
            "groups": {k: sorted(v) for k, v in self.groups.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LabelSchema":
        try:
            return cls(
                schema_id=str(doc["schema_id"]),
                entries=tuple((int(i), str(n)) for i, n in doc["entries"]),
                groups={str(k): v for k, v in doc.get("groups", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc


def builtin_schema(kind: str, n_cortical: int = 31, n_subcortical: int = 22) -> LabelSchema:
    """Return the CM (tumor subregions) or UM (healthy structures + tumor) schema."""
    kind = kind.upper()
    if kind == "CM":
        return LabelSchema(
            "CM",
            entries=(
                (BACKGROUND, "background"),
                (NECROTIC_CORE, "necrotic_core"),
                (EDEMA, "edema"),
                (ENHANCING_TUMOR, "enhancing_tumor"),
            ),
            groups={
                "whole_tumor": {NECROTIC_CORE, EDEMA, ENHANCING_TUMOR},
                "tumor_core": {NECROTIC_CORE, ENHANCING_TUMOR},
                "enhancing_tumor": {ENHANCING_TUMOR},
            },
        )
    if kind == "UM":
        if n_cortical < 1 or n_subcortical < 1:
            raise SchemaError("UM schema needs at least one cortical and one subcortical label")
        cortical = list(range(1, n_cortical + 1))
        subcortical = list(range(n_cortical + 1, n_cortical + n_subcortical + 1))
        tumor = n_cortical + n_subcortical + 1
        entries = [(BACKGROUND, "background")]
        entries += [(lab, f"cortical_{n:02d}") for n, lab in enumerate(cortical, 1)]
        entries += [(lab, f"subcortical_{n:02d}") for n, lab in enumerate(subcortical, 1)]
        entries.append((tumor, "tumor"))
        return LabelSchema(
            "UM",
            entries=tuple(entries),
            groups={
                "cortical": set(cortical),
                "subcortical": set(subcortical),
                "whole_brain": set(cortical) | set(subcortical),
                "tumor_all": {tumor},
            },
        )
    raise SchemaError(f"unknown builtin schema {kind!r}; expected CM or UM")


def resolve_group(schema: LabelSchema, name: str) -> frozenset[int]:
    try:
        return schema.groups[name]
    except KeyError:
        raise SchemaError(f"schema {schema.schema_id!r} has no group {name!r}") from None


def load_schema(ref: str | os.PathLike) -> LabelSchema:
    """Accept a builtin name (``CM``/``UM``) or a path to a schema JSON document."""
    if str(ref).upper() in ("CM", "UM"):
        return builtin_schema(str(ref))
    try:
        with open(ref) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"schema file {str(ref)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema file {str(ref)!r} is not valid JSON: {exc}") from None
    return LabelSchema.from_json(doc)


def save_schema(schema: LabelSchema, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")
