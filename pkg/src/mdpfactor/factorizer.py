"""Thresholding MI matrices and splitting them into independent blocks.

Rows are next-state variables, columns are state/action inputs. A 1-entry in
the adjacency matrix links a row to a column; clusters are the connected
components of that bipartite graph.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mi import MiMatrix, read_matrix_csv, write_matrix_csv


class FactorizationError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdSpec:
    q: float
    delta_per_column: dict[str, float]
    scope: str = "column"


@dataclass(frozen=True, eq=False)
class AdjacencyMatrix:
    values: np.ndarray = field(repr=False)
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    threshold_spec: ThresholdSpec | None = None

    def __post_init__(self):
        values = np.array(self.values, copy=True)
        rows, cols = tuple(self.row_labels), tuple(self.col_labels)
        if values.shape != (len(rows), len(cols)):
            raise FactorizationError(
                f"values shape {values.shape} does not match labels ({len(rows)}, {len(cols)})"
            )
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise FactorizationError("row and column labels must be unique")
        if not np.isin(values, (0, 1)).all():
            raise FactorizationError("adjacency entries must be 0 or 1")
        values = values.astype(np.int8)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_labels", rows)
        object.__setattr__(self, "col_labels", cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, AdjacencyMatrix):
            return NotImplemented
        return (self.row_labels == other.row_labels and self.col_labels == other.col_labels
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class Cluster:
    id: int
    state_rows: tuple[str, ...]
    input_columns: tuple[str, ...]


@dataclass(frozen=True)
class Factorization:
    clusters: tuple[Cluster, ...]
    row_order: tuple[str, ...]
    col_order: tuple[str, ...]
    unassigned_rows: tuple[str, ...]
    unassigned_columns: tuple[str, ...]

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def memberships(self) -> set[tuple[frozenset, frozenset]]:
        """Clusters as label sets, independent of ids and ordering."""
        return {(frozenset(c.state_rows), frozenset(c.input_columns)) for c in self.clusters}


SCOPES = ("column", "matrix")


def threshold_matrix(mi: MiMatrix, q: float, scope: str = "column") -> AdjacencyMatrix:
    """Mark entries at or above a ``q``-quantile threshold (linear interpolation).

    With ``scope="column"`` every column gets its own threshold, so each
    column keeps at least its maximum. ``scope="matrix"`` uses one threshold
    computed over all entries; columns may then end up without edges.
    """
    values = np.asarray(mi.values, dtype=np.float64)
    if values.size == 0:
        raise FactorizationError("cannot threshold an empty matrix")
    if not 0.0 <= q <= 1.0:
        raise FactorizationError(f"quantile level must be in [0, 1], got {q}")
    if scope == "column":
        delta = np.quantile(values, q, axis=0, method="linear")
        # keep the column max marked even if interpolation rounds upward
        delta = np.minimum(delta, values.max(axis=0))
    elif scope == "matrix":
        level = min(float(np.quantile(values, q, method="linear")), float(values.max()))
        delta = np.full(values.shape[1], level)
    else:
        raise FactorizationError(f"unknown threshold scope {scope!r}; expected one of {SCOPES}")
    adj = (values >= delta[None, :]).astype(np.int8)
    spec = ThresholdSpec(float(q), {c: float(d) for c, d in zip(mi.col_labels, delta)}, scope)
    return AdjacencyMatrix(adj, mi.row_labels, mi.col_labels, spec)


def _components(adj: np.ndarray) -> list[tuple[list[int], list[int]]]:
    """Bipartite components by DFS that alternates row -> columns -> rows."""
    n_rows, n_cols = adj.shape
    row_seen = np.zeros(n_rows, dtype=bool)
    col_seen = np.zeros(n_cols, dtype=bool)
    row_nbrs = [np.flatnonzero(adj[i]).tolist() for i in range(n_rows)]
    col_nbrs = [np.flatnonzero(adj[:, j]).tolist() for j in range(n_cols)]

    comps = []
    for j0 in range(n_cols):
        if col_seen[j0] or not col_nbrs[j0]:
            continue
        rows, cols = [], []
        col_seen[j0] = True
        stack = [("col", j0)]
        while stack:
            side, idx = stack.pop()
            if side == "col":
                cols.append(idx)
                for i in col_nbrs[idx]:
                    if not row_seen[i]:
                        row_seen[i] = True
                        stack.append(("row", i))
            else:
                rows.append(idx)
                for j in row_nbrs[idx]:
                    if not col_seen[j]:
                        col_seen[j] = True
                        stack.append(("col", j))
        comps.append((sorted(rows), sorted(cols)))
    return comps


def block_diagonalize(adj: AdjacencyMatrix) -> Factorization:
    """Group rows and columns into the connected components of the adjacency graph.

    Clusters are numbered by their smallest original column index; members
    keep their original relative order. Labels without any edge are reported
    as unassigned and placed last in the orderings.
    """
    values = np.asarray(adj.values)
    comps = _components(values)
    comps.sort(key=lambda rc: (min(rc[1]), min(rc[0])))
    rows_l, cols_l = adj.row_labels, adj.col_labels
    clusters = tuple(
        Cluster(k, tuple(rows_l[i] for i in r), tuple(cols_l[j] for j in c))
        for k, (r, c) in enumerate(comps)
    )
    used_rows = {i for r, _ in comps for i in r}
    used_cols = {j for _, c in comps for j in c}
    free_rows = tuple(rows_l[i] for i in range(len(rows_l)) if i not in used_rows)
    free_cols = tuple(cols_l[j] for j in range(len(cols_l)) if j not in used_cols)
    row_order = tuple(r for c in clusters for r in c.state_rows) + free_rows
    col_order = tuple(x for c in clusters for x in c.input_columns) + free_cols
    return Factorization(clusters, row_order, col_order, free_rows, free_cols)


@dataclass(frozen=True)
class TuneRow:
    q: float
    n_clusters: int
    largest_cluster_fraction: float
    delta_min: float
    delta_max: float


def tune_threshold(mi: MiMatrix, q_grid: Sequence[float], scope: str = "column") -> list[TuneRow]:
    """Cluster diagnostics for each quantile level; the caller picks one.

    ``largest_cluster_fraction`` is the share of all row and column labels
    that fall in the biggest cluster.
    """
    if len(q_grid) == 0:
        raise FactorizationError("q_grid must not be empty")
    total = sum(mi.shape)
    report = []
    for q in q_grid:
        adj = threshold_matrix(mi, q, scope)
        f = block_diagonalize(adj)
        sizes = [len(c.state_rows) + len(c.input_columns) for c in f.clusters]
        deltas = list(adj.threshold_spec.delta_per_column.values())
        report.append(TuneRow(float(q), f.n_clusters, max(sizes, default=0) / total,
                              min(deltas), max(deltas)))
    return report


def frobenius_error(predicted: AdjacencyMatrix, truth: AdjacencyMatrix) -> float:
    """Squared Frobenius distance divided by the number of entries."""
    if predicted.shape != truth.shape:
        raise FactorizationError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    if predicted.row_labels != truth.row_labels or predicted.col_labels != truth.col_labels:
        raise FactorizationError("label mismatch between predicted and truth matrices")
    diff = truth.values.astype(np.float64) - predicted.values.astype(np.float64)
    return float(np.sum(diff * diff) / diff.size)


# -- export ------------------------------------------------------------------


def _check_pair(f: Factorization, adj: AdjacencyMatrix) -> None:
    if set(f.row_order) != set(adj.row_labels) or set(f.col_order) != set(adj.col_labels):
        raise FactorizationError("factorization labels do not match the adjacency matrix")
    if block_diagonalize(adj) != f:
        raise FactorizationError("factorization was not derived from this adjacency matrix")


def factorization_to_dict(f: Factorization, adj: AdjacencyMatrix | None = None) -> dict:
    doc = {
        "clusters": [
            {"id": c.id, "state_rows": list(c.state_rows), "input_columns": list(c.input_columns)}
            for c in f.clusters
        ],
        "row_order": list(f.row_order),
        "col_order": list(f.col_order),
        "unassigned_rows": list(f.unassigned_rows),
        "unassigned_columns": list(f.unassigned_columns),
    }
    if adj is not None and adj.threshold_spec is not None:
        doc["threshold"] = {"q": adj.threshold_spec.q,
                            "delta_per_column": dict(adj.threshold_spec.delta_per_column),
                            "scope": adj.threshold_spec.scope}
    return doc


def factorization_from_dict(doc: dict) -> Factorization:
    try:
        clusters = tuple(Cluster(int(c["id"]), tuple(c["state_rows"]), tuple(c["input_columns"]))
                         for c in doc["clusters"])
        return Factorization(clusters, tuple(doc["row_order"]), tuple(doc["col_order"]),
                             tuple(doc["unassigned_rows"]), tuple(doc["unassigned_columns"]))
    except (KeyError, TypeError) as exc:
        raise FactorizationError(f"malformed factorization document: {exc}") from exc


def _dot_id(label: str) -> str:
    return '"' + label.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _to_dot(f: Factorization, adj: AdjacencyMatrix) -> str:
    lines = ["graph factorization {", "  node [fontname=\"Helvetica\"];"]
    for c in f.clusters:
        lines.append(f"  subgraph cluster_{c.id} {{")
        lines.append(f"    label={_dot_id(f'cluster {c.id}')};")
        for r in c.state_rows:
            lines.append(f"    {_dot_id('row:' + r)} [label={_dot_id(r)}, shape=ellipse];")
        for x in c.input_columns:
            lines.append(f"    {_dot_id('col:' + x)} [label={_dot_id(x)}, shape=box];")
        lines.append("  }")
    for r in f.unassigned_rows:
        lines.append(f"  {_dot_id('row:' + r)} [label={_dot_id(r)}, shape=ellipse, style=dashed];")
    for x in f.unassigned_columns:
        lines.append(f"  {_dot_id('col:' + x)} [label={_dot_id(x)}, shape=box, style=dashed];")
    for i, j in np.argwhere(adj.values == 1).tolist():
        lines.append(f"  {_dot_id('col:' + adj.col_labels[j])} -- "
                     f"{_dot_id('row:' + adj.row_labels[i])};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _reordered(f: Factorization, adj: AdjacencyMatrix) -> np.ndarray:
    ri = [adj.row_labels.index(r) for r in f.row_order]
    ci = [adj.col_labels.index(c) for c in f.col_order]
    return adj.values[np.ix_(ri, ci)]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _to_svg(f: Factorization, adj: AdjacencyMatrix, cell: int = 18) -> str:
    m = _reordered(f, adj)
    n_rows, n_cols = m.shape
    left = 8 + 7 * max((len(r) for r in f.row_order), default=1)
    top = 8 + 7 * max((len(c) for c in f.col_order), default=1)
    width, height = left + n_cols * cell + 8, top + n_rows * cell + 8
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for j, label in enumerate(f.col_order):
        x = left + j * cell + cell // 2 + 4
        out.append(f'<text x="{x}" y="{top - 4}" transform="rotate(-90 {x} {top - 4})">'
                   f'{_esc(label)}</text>')
    for i, label in enumerate(f.row_order):
        y = top + i * cell + cell - 5
        out.append(f'<text x="{left - 4}" y="{y}" text-anchor="end">{_esc(label)}</text>')
    for i in range(n_rows):
        for j in range(n_cols):
            fill = "#1f4e79" if m[i, j] else "#eeeeee"
            out.append(f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" '
                       f'height="{cell}" fill="{fill}" stroke="white"/>')
    r0 = c0 = 0
    for c in f.clusters:
        h, w = len(c.state_rows), len(c.input_columns)
        out.append(f'<rect class="block" x="{left + c0 * cell}" y="{top + r0 * cell}" '
                   f'width="{w * cell}" height="{h * cell}" fill="none" stroke="#d62728" '
                   f'stroke-width="2"/>')
        r0, c0 = r0 + h, c0 + w
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_factorization(f: Factorization, adj: AdjacencyMatrix, format: str) -> str:
    """Render a factorization as json, dot, svg or csv text."""
    _check_pair(f, adj)
    if format == "json":
        return json.dumps(factorization_to_dict(f, adj), indent=2) + "\n"
    if format == "dot":
        return _to_dot(f, adj)
    if format == "svg":
        return _to_svg(f, adj)
    if format == "csv":
        lines = [",".join([""] + list(f.col_order))]
        for label, row in zip(f.row_order, _reordered(f, adj).tolist()):
            lines.append(",".join([label] + [str(v) for v in row]))
        return "\n".join(lines) + "\n"
    raise FactorizationError(f"unknown export format {format!r}")


def save_adjacency(adj: AdjacencyMatrix, path: str | Path) -> None:
    write_matrix_csv(path, adj.values, adj.row_labels, adj.col_labels, fmt=str)


def load_adjacency(path: str | Path) -> AdjacencyMatrix:
    values, rows, cols = read_matrix_csv(path)
    try:
        return AdjacencyMatrix(values, rows, cols)
    except FactorizationError as exc:
        raise FactorizationError(f"{path}: {exc}") from exc
