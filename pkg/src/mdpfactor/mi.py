"""k-nearest-neighbour mutual information for mixed discrete/continuous columns.

The pair estimator follows the mixed-variable KSG construction: for each sample
take the max-norm distance ``d`` to its k-th joint neighbour; when ``d`` is zero
the sample sits on a discrete atom and the neighbour count becomes the number
of exact joint duplicates. Marginal counts include every other sample within
``d`` (inclusive). Discrete codes are compared as integers, so different
categories are at distance >= 1 and continuous data is expected in [0, 1].
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .dataset import TransitionDataset, permutation

DEFAULT_K = 3
DEFAULT_SHUFFLES = 1


class EstimatorError(ValueError):
    pass


def _as_column(values, kind: str | None, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise EstimatorError(f"{name} must be one-dimensional")
    if not np.isfinite(v).all():
        raise EstimatorError(f"{name} contains non-finite values")
    if kind == "discrete" and ((v != np.floor(v)) | (v < 0)).any():
        raise EstimatorError(f"{name} is discrete but holds non-integer or negative codes")
    elif kind not in (None, "discrete", "continuous"):
        raise EstimatorError(f"unknown kind {kind!r}")
    return v


def _check_pair(x, y, k, x_kind, y_kind) -> tuple[np.ndarray, np.ndarray]:
    if k < 1:
        raise EstimatorError(f"k must be >= 1, got {k}")
    x = _as_column(x, x_kind, "x")
    y = _as_column(y, y_kind, "y")
    if x.shape != y.shape:
        raise EstimatorError(f"x and y lengths differ: {x.size} != {y.size}")
    if x.size <= k:
        raise EstimatorError(f"need more than k={k} samples, got {x.size}")
    return x, y


def _is_constant(v: np.ndarray) -> bool:
    return bool(v.min() == v.max())


def _aggregate(N: int, k_tilde: np.ndarray, n_x: np.ndarray, n_y: np.ndarray) -> float:
    # ln(n_x+1) + ln(n_y+1) is summed first so swapping x and y is bit-exact
    marginal = np.log(n_x + 1.0) + np.log(n_y + 1.0)
    terms = digamma(k_tilde.astype(np.float64)) + np.log(N) - marginal
    # summing in sorted order makes the result independent of row order
    return max(0.0, float(np.mean(np.sort(terms))))


def _tie_counts(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Number of other samples sharing the exact joint value of each sample."""
    _, inverse, counts = np.unique(
        np.column_stack([x, y]), axis=0, return_inverse=True, return_counts=True
    )
    return counts[inverse.ravel()] - 1


def _count_within(v: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """For each i, #{j != i : |v_j - v_i| <= radius_i}, matching elementwise float arithmetic.

    On the sorted array, ``fl(s_j - v_i)`` is monotone in ``s_j`` so both window
    edges are found by a vectorised binary search on the exact predicate.
    """
    N = v.size
    order = np.argsort(v, kind="stable")
    s = v[order]
    pos = np.empty(N, dtype=np.intp)
    pos[order] = np.arange(N)
    v_at = s[pos]

    lo, hi = pos.copy(), np.full(N, N, dtype=np.intp)
    while True:
        active = hi - lo > 1
        if not active.any():
            break
        mid = np.where(active, (lo + hi) // 2, lo)
        ok = s[mid] - v_at <= radius
        lo = np.where(active & ok, mid, lo)
        hi = np.where(active & ~ok, mid, hi)
    right = lo

    lo, hi = np.full(N, -1, dtype=np.intp), pos.copy()
    while True:
        active = hi - lo > 1
        if not active.any():
            break
        mid = np.where(active, (lo + hi) // 2, hi)
        ok = v_at - s[mid] <= radius
        hi = np.where(active & ok, mid, hi)
        lo = np.where(active & ~ok, mid, lo)
    left = hi
    return right - left


def estimate_pair_mi(x, y, k: int = DEFAULT_K, x_kind: str | None = None,
                     y_kind: str | None = None) -> float:
    """Mixed discrete/continuous k-NN mutual information between two columns, in nats.

    Clipped at zero. Constant columns return 0 without running the estimator.
    """
    x, y = _check_pair(x, y, k, x_kind, y_kind)
    if _is_constant(x) or _is_constant(y):
        return 0.0
    N = x.size
    joint = np.column_stack([x, y])
    dist, _ = cKDTree(joint).query(joint, k=k + 1, p=np.inf)
    radius = dist[:, -1]
    k_tilde = np.full(N, k, dtype=np.int64)
    zero = radius == 0
    if zero.any():
        k_tilde[zero] = _tie_counts(x, y)[zero]
    return _aggregate(N, k_tilde, _count_within(x, radius), _count_within(y, radius))


def estimate_pair_mi_bruteforce(x, y, k: int = DEFAULT_K, x_kind: str | None = None,
                                y_kind: str | None = None) -> float:
    """O(N^2) reference for :func:`estimate_pair_mi` built from full distance matrices."""
    x, y = _check_pair(x, y, k, x_kind, y_kind)
    if _is_constant(x) or _is_constant(y):
        return 0.0
    N = x.size
    dx = np.abs(x[:, None] - x[None, :])
    dy = np.abs(y[:, None] - y[None, :])
    dz = np.maximum(dx, dy)
    np.fill_diagonal(dz, np.inf)
    radius = np.sort(dz, axis=1)[:, k - 1]
    np.fill_diagonal(dx, np.inf)
    np.fill_diagonal(dy, np.inf)
    k_tilde = np.where(radius == 0, (dz == 0).sum(axis=1), k)
    n_x = (dx <= radius[:, None]).sum(axis=1)
    n_y = (dy <= radius[:, None]).sum(axis=1)
    return _aggregate(N, k_tilde, n_x, n_y)


def derive_seed(seed: int, input_name: str, target_name: str, index: int) -> int:
    """Sub-seed for one shuffle of one matrix entry, independent of evaluation order."""
    key = json.dumps([int(seed), input_name, target_name, int(index)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def bias_corrected_mi(dataset: TransitionDataset, input: str, target: str,
                      k: int = DEFAULT_K, shuffles: int = DEFAULT_SHUFFLES,
                      seed: int = 0) -> float:
    """Raw MI minus the mean MI over ``shuffles`` shuffled copies of the input column."""
    if shuffles < 1:
        raise EstimatorError(f"shuffles must be >= 1, got {shuffles}")
    x = dataset.column(input)
    y = dataset.column(target)
    x_kind, y_kind = dataset.spec(input).kind, dataset.spec(target).kind
    raw = estimate_pair_mi(x, y, k, x_kind, y_kind)
    if _is_constant(x) or _is_constant(y):
        return 0.0
    baseline = [
        estimate_pair_mi(x[permutation(x.size, derive_seed(seed, input, target, s))],
                         y, k, x_kind, y_kind)
        for s in range(shuffles)
    ]
    return max(0.0, raw - float(np.mean(baseline)))


@dataclass(frozen=True, eq=False)
class MiMatrix:
    """Bias-corrected MI between next-state variables (rows) and inputs (columns)."""

    values: np.ndarray = field(repr=False)
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    estimator_params: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        rows, cols = tuple(self.row_labels), tuple(self.col_labels)
        if values.shape != (len(rows), len(cols)):
            raise ValueError(f"values shape {values.shape} does not match labels "
                             f"({len(rows)}, {len(cols)})")
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("row and column labels must be unique")
        if (values < 0).any() or not np.isfinite(values).all():
            raise ValueError("MI entries must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_labels", rows)
        object.__setattr__(self, "col_labels", cols)
        object.__setattr__(self, "estimator_params", dict(self.estimator_params))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, MiMatrix):
            return NotImplemented
        return (self.row_labels == other.row_labels and self.col_labels == other.col_labels
                and np.array_equal(self.values, other.values)
                and self.estimator_params == other.estimator_params)

    __hash__ = None


def compute_mi_matrix(dataset: TransitionDataset, k: int = DEFAULT_K,
                      shuffles: int = DEFAULT_SHUFFLES, seed: int = 0,
                      column_subset: Sequence[str] | None = None,
                      n_jobs: int | None = None) -> MiMatrix:
    """MI matrix of every (next-state, input) pair, optionally restricted to some inputs.

    Entries are independent; ``n_jobs`` evaluates them with joblib and gives
    the same matrix as the serial path.
    """
    inputs = dataset.input_names
    if column_subset is None:
        columns = list(inputs)
    else:
        columns = list(column_subset)
        if not columns:
            raise EstimatorError("column_subset must not be empty")
        unknown = [c for c in columns if c not in inputs]
        if unknown:
            raise EstimatorError(f"unknown input column(s): {unknown}")
    targets = dataset.target_names
    cells = [(t, c) for t in targets for c in columns]

    if n_jobs in (None, 1):
        flat = [bias_corrected_mi(dataset, c, t, k, shuffles, seed) for t, c in cells]
    else:
        from joblib import Parallel, delayed

        flat = Parallel(n_jobs=n_jobs)(
            delayed(bias_corrected_mi)(dataset, c, t, k, shuffles, seed) for t, c in cells
        )
    values = np.asarray(flat, dtype=np.float64).reshape(len(targets), len(columns))
    params = {"k": int(k), "shuffles": int(shuffles), "seed": int(seed)}
    return MiMatrix(values, targets, columns, params)


# -- storage -----------------------------------------------------------------


def write_matrix_csv(path: str | Path, values: np.ndarray, row_labels, col_labels,
                     fmt=lambda v: format(v, ".17g")) -> None:
    lines = [",".join([""] + list(col_labels))]
    for label, row in zip(row_labels, np.asarray(values).tolist()):
        lines.append(",".join([label] + [fmt(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_csv(path: str | Path) -> tuple[np.ndarray, list[str], list[str]]:
    import csv

    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            records = list(csv.reader(fh))
    except OSError as exc:
        raise ValueError(f"cannot read matrix {path}: {exc}") from exc
    if len(records) < 2 or len(records[0]) < 2:
        raise ValueError(f"{path}: matrix CSV needs a header row and at least one data row")
    cols = records[0][1:]
    rows, data = [], []
    for lineno, rec in enumerate(records[1:], start=2):
        if len(rec) != len(cols) + 1:
            raise ValueError(f"{path}: line {lineno}: expected {len(cols) + 1} fields")
        rows.append(rec[0])
        try:
            data.append([float(c) for c in rec[1:]])
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric entry") from None
    return np.asarray(data, dtype=np.float64), rows, cols


def mi_meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_mi_matrix(mi: MiMatrix, path: str | Path) -> None:
    write_matrix_csv(path, mi.values, mi.row_labels, mi.col_labels)
    mi_meta_path(path).write_text(
        json.dumps({"estimator_params": mi.estimator_params}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_mi_matrix(path: str | Path) -> MiMatrix:
    values, rows, cols = read_matrix_csv(path)
    meta = mi_meta_path(path)
    params = json.loads(meta.read_text(encoding="utf-8"))["estimator_params"] if meta.exists() else {}
    return MiMatrix(values, rows, cols, params)
