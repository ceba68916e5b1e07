"""Transition datasets: schema, CSV + JSON manifest storage, column shuffling.

A dataset holds T logged transitions ``(state, action, next_state)`` as a dense
float matrix whose columns follow the schema order: all state variables, then
all action variables, then all next-state variables. Discrete variables are
stored as non-negative integer category codes.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ROLES = ("state", "action", "next_state")
KINDS = ("continuous", "discrete")
NEXT_PREFIX = "next_"


class DatasetError(ValueError):
    """Raised for malformed dataset files or schema violations."""


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str
    kind: str
    index: int

    def __post_init__(self):
        if self.role not in ROLES:
            raise DatasetError(f"unknown role {self.role!r} for variable {self.name!r}")
        if self.kind not in KINDS:
            raise DatasetError(f"unknown kind {self.kind!r} for variable {self.name!r}")


def make_schema(
    state: Sequence[tuple[str, str]],
    action: Sequence[tuple[str, str]],
) -> tuple[VariableSpec, ...]:
    """Build a schema from ``(name, kind)`` pairs; next-state variables are derived.

    Each state variable ``x`` gets a mirrored next-state variable ``next_x``
    with the same kind.
    """
    specs = [VariableSpec(name, "state", kind, i) for i, (name, kind) in enumerate(state)]
    specs += [VariableSpec(name, "action", kind, i) for i, (name, kind) in enumerate(action)]
    specs += [
        VariableSpec(NEXT_PREFIX + name, "next_state", kind, i)
        for i, (name, kind) in enumerate(state)
    ]
    _check_schema(specs)
    return tuple(specs)


def _check_schema(schema: Sequence[VariableSpec]) -> None:
    names = [v.name for v in schema]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise DatasetError(f"duplicate variable names: {dup}")
    order = [ROLES.index(v.role) for v in schema]
    if order != sorted(order):
        raise DatasetError("schema must list state, then action, then next_state variables")
    for role in ROLES:
        idx = [v.index for v in schema if v.role == role]
        if idx != list(range(len(idx))):
            raise DatasetError(f"{role} indices must be 0..{len(idx) - 1} in order")
    state = [v for v in schema if v.role == "state"]
    nxt = [v for v in schema if v.role == "next_state"]
    if len(state) != len(nxt):
        raise DatasetError(
            f"{len(state)} state variables but {len(nxt)} next_state variables"
        )
    for s, t in zip(state, nxt):
        if t.name != NEXT_PREFIX + s.name:
            raise DatasetError(f"next_state variable {t.name!r} must be named {NEXT_PREFIX + s.name!r}")
        if t.kind != s.kind:
            raise DatasetError(f"kind mismatch between {s.name!r} and {t.name!r}")


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Immutable table of transitions with its schema.

    ``values`` has shape ``(T, n + m + n)``; it is copied and marked read-only
    on construction.
    """

    schema: tuple[VariableSpec, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        schema = tuple(self.schema)
        _check_schema(schema)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise DatasetError(
                f"values must have shape (T, {len(schema)}), got {values.shape}"
            )
        if values.shape[0] < 1:
            raise DatasetError("dataset must contain at least one transition (T >= 1)")
        bad = ~np.isfinite(values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DatasetError(f"non-finite value at row {r + 1}, column {schema[c].name!r}")
        for c, spec in enumerate(schema):
            if spec.kind != "discrete":
                continue
            col = values[:, c]
            wrong = (col != np.floor(col)) | (col < 0)
            if wrong.any():
                r = int(np.flatnonzero(wrong)[0])
                raise DatasetError(
                    f"discrete column {spec.name!r} has non-integer or negative value "
                    f"{col[r]!r} at row {r + 1}"
                )
        values.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.schema]

    def variables(self, role: str) -> list[VariableSpec]:
        return [v for v in self.schema if v.role == role]

    @property
    def input_names(self) -> list[str]:
        return [v.name for v in self.schema if v.role in ("state", "action")]

    @property
    def target_names(self) -> list[str]:
        return [v.name for v in self.schema if v.role == "next_state"]

    def spec(self, name: str) -> VariableSpec:
        for v in self.schema:
            if v.name == name:
                return v
        raise KeyError(f"unknown column {name!r}")

    def column_index(self, name: str) -> int:
        for i, v in enumerate(self.schema):
            if v.name == name:
                return i
        raise KeyError(f"unknown column {name!r}")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def with_values(self, values: np.ndarray) -> "TransitionDataset":
        return TransitionDataset(self.schema, values)

    def __eq__(self, other):
        if not isinstance(other, TransitionDataset):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.values, other.values)

    __hash__ = None


# -- storage -----------------------------------------------------------------


def manifest_path(path: str | Path) -> Path:
    """Sidecar manifest location for a dataset CSV: ``foo.csv`` -> ``foo.manifest.json``."""
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _format_value(value: float, kind: str) -> str:
    if kind == "discrete":
        return str(int(value))
    return format(value, ".17g")


def save_dataset(dataset: TransitionDataset, path: str | Path) -> None:
    """Write ``dataset`` as CSV plus its JSON manifest sidecar."""
    if not isinstance(dataset, TransitionDataset):
        raise TypeError("save_dataset expects a TransitionDataset")
    path = Path(path)
    manifest = {
        role: [{"name": v.name, "kind": v.kind} for v in dataset.variables(role)]
        for role in ROLES
    }
    kinds = [v.kind for v in dataset.schema]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(dataset.names)
            for row in dataset.values:
                writer.writerow([_format_value(v, k) for v, k in zip(row.tolist(), kinds)])
        with open(manifest_path(path), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {path}: {exc}") from exc


def _parse_manifest(path: Path) -> tuple[VariableSpec, ...]:
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise DatasetError(f"missing manifest {path}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(manifest, dict) or any(r not in manifest for r in ROLES):
        raise DatasetError(f"manifest {path} must have keys {list(ROLES)}")
    specs = []
    for role in ROLES:
        for i, entry in enumerate(manifest[role]):
            try:
                specs.append(VariableSpec(entry["name"], role, entry["kind"], i))
            except (KeyError, TypeError) as exc:
                raise DatasetError(f"manifest {path}: bad {role} entry #{i}: {entry!r}") from exc
    schema = tuple(specs)
    _check_schema(schema)
    return schema


def load_dataset(path: str | Path) -> TransitionDataset:
    """Read a dataset CSV and its manifest, validating every cell."""
    path = Path(path)
    schema = _parse_manifest(manifest_path(path))
    names = [v.name for v in schema]
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        if header != names:
            role_of = {v.name: v.role for v in schema}
            for role in ROLES:
                want = sum(1 for v in schema if v.role == role)
                have = sum(1 for h in header if role_of.get(h) == role)
                if have != want:
                    raise DatasetError(
                        f"{path}: column mismatch: manifest lists {want} {role} "
                        f"variables, CSV header has {have}"
                    )
            raise DatasetError(f"{path}: column mismatch: header {header} != manifest {names}")
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(names):
                raise DatasetError(
                    f"{path}: line {lineno}: expected {len(names)} fields, got {len(record)}"
                )
            row = []
            for name, spec, cell in zip(names, schema, record):
                try:
                    value = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{path}: line {lineno}, column {name!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DatasetError(f"{path}: line {lineno}, column {name!r}: non-finite value")
                if spec.kind == "discrete" and (value != int(value) or value < 0):
                    raise DatasetError(
                        f"{path}: line {lineno}, column {name!r}: discrete value {cell!r} "
                        "is not a non-negative integer"
                    )
                row.append(value)
            rows.append(row)
    if not rows:
        raise DatasetError(f"{path}: no transitions (T must be >= 1)")
    return TransitionDataset(schema, np.asarray(rows, dtype=np.float64))


# -- transformations -----------------------------------------------------------


def permutation(T: int, seed: int) -> np.ndarray:
    """Uniform random permutation of ``range(T)`` drawn deterministically from ``seed``."""
    return np.random.default_rng(seed).permutation(T)


def shuffle_column(dataset: TransitionDataset, column: str, seed: int) -> TransitionDataset:
    """Return a copy with ``column`` permuted across rows; other columns untouched."""
    c = dataset.column_index(column)
    values = dataset.values.copy()
    values[:, c] = values[permutation(dataset.T, seed), c]
    return dataset.with_values(values)


def minmax_normalize(
    dataset: TransitionDataset, columns: Iterable[str] | None = None
) -> tuple[TransitionDataset, dict[str, dict[str, float]]]:
    """Rescale continuous columns to [0, 1]; returns the dataset and the scaling used.

    Constant columns map to 0. Discrete columns are left as category codes.
    """
    wanted = set(columns) if columns is not None else None
    values = dataset.values.copy()
    scaling = {}
    for c, spec in enumerate(dataset.schema):
        if spec.kind != "continuous" or (wanted is not None and spec.name not in wanted):
            continue
        lo, hi = float(values[:, c].min()), float(values[:, c].max())
        span = hi - lo
        values[:, c] = (values[:, c] - lo) / span if span > 0 else 0.0
        scaling[spec.name] = {"min": lo, "max": hi}
    return dataset.with_values(values), scaling
