"""scikit-learn style front end: fit on transitions, inspect the discovered blocks."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import TransitionDataset, make_schema, minmax_normalize
from .factorizer import (
    AdjacencyMatrix,
    block_diagonalize,
    frobenius_error,
    threshold_matrix,
)
from .mi import DEFAULT_K, DEFAULT_SHUFFLES, MiMatrix, compute_mi_matrix


def dataset_from_arrays(X, Y, feature_names=None, discrete_features=None) -> TransitionDataset:
    """Wrap input and next-state arrays as a :class:`TransitionDataset`.

    ``X`` holds the n state columns followed by the m action columns; ``Y``
    holds the n next-state columns in the same order as the state columns.
    ``discrete_features`` is a boolean mask or a list of names/indices over
    the columns of ``X``.
    """
    if feature_names is None and hasattr(X, "columns"):
        feature_names = [str(c) for c in X.columns]
    X = check_array(X, dtype=np.float64)
    Y = check_array(Y, dtype=np.float64, ensure_2d=False)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    n, p = Y.shape[1], X.shape[1]
    if p < n:
        raise ValueError(f"X must start with the {n} state columns mirrored by Y")
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(p)]
    if len(names) != p:
        raise ValueError(f"expected {p} feature names, got {len(names)}")

    discrete = np.zeros(p, dtype=bool)
    if discrete_features is not None:
        mask = np.asarray(discrete_features)
        if mask.dtype == bool:
            discrete = mask.copy()
        else:
            for f in discrete_features:
                discrete[names.index(f) if isinstance(f, str) else int(f)] = True
    kind = ["discrete" if d else "continuous" for d in discrete]
    schema = make_schema(list(zip(names[:n], kind[:n])), list(zip(names[n:], kind[n:])))
    return TransitionDataset(schema, np.hstack([X, Y]))


def _as_dataset(X, Y, feature_names, discrete_features) -> TransitionDataset:
    if isinstance(X, TransitionDataset):
        if Y is not None:
            raise ValueError("pass either a TransitionDataset or (X, Y), not both")
        return X
    if Y is None:
        raise ValueError("Y (next states) is required when X is an array")
    return dataset_from_arrays(X, Y, feature_names, discrete_features)


class MutualInformationMatrix(BaseEstimator):
    """Bias-corrected k-NN MI between every next-state variable and every input.

    Parameters
    ----------
    k : int
        Neighbour count of the estimator.
    shuffles : int
        Number of shuffled copies averaged for the bias correction.
    random_state : int
        Seed for the shuffles.
    columns : list of str, optional
        Restrict the computation to these input columns.
    normalize : bool
        Min-max scale continuous columns to [0, 1] before estimating.
    n_jobs : int, optional
        Parallel workers for matrix entries (joblib).
    """

    def __init__(self, k=DEFAULT_K, shuffles=DEFAULT_SHUFFLES, random_state=0, columns=None,
                 normalize=False, n_jobs=None):
        self.k = k
        self.shuffles = shuffles
        self.random_state = random_state
        self.columns = columns
        self.normalize = normalize
        self.n_jobs = n_jobs

    def fit(self, X, Y=None, feature_names=None, discrete_features=None):
        data = _as_dataset(X, Y, feature_names, discrete_features)
        self.scaling_ = {}
        if self.normalize:
            data, self.scaling_ = minmax_normalize(data)
        self.mi_matrix_ = compute_mi_matrix(data, self.k, self.shuffles, self.random_state,
                                            self.columns, self.n_jobs)
        self.feature_names_in_ = np.asarray(data.input_names, dtype=object)
        self.n_features_in_ = len(self.feature_names_in_)
        return self

    @property
    def values_(self) -> np.ndarray:
        check_is_fitted(self, "mi_matrix_")
        return self.mi_matrix_.values


class StructureFactorizer(BaseEstimator):
    """Discover independent (next-state, input) blocks from logged transitions.

    Fitting estimates the MI matrix, thresholds it at quantile level
    ``quantile`` and takes connected components of the resulting bipartite
    graph.

    Attributes
    ----------
    mi_matrix_ : MiMatrix
    adjacency_ : AdjacencyMatrix
    factorization_ : Factorization
    n_clusters_ : int
    """

    def __init__(self, k=DEFAULT_K, shuffles=DEFAULT_SHUFFLES, random_state=0, quantile=0.5,
                 scope="column", columns=None, normalize=False, n_jobs=None):
        self.k = k
        self.shuffles = shuffles
        self.random_state = random_state
        self.quantile = quantile
        self.scope = scope
        self.columns = columns
        self.normalize = normalize
        self.n_jobs = n_jobs

    def fit(self, X, Y=None, feature_names=None, discrete_features=None):
        mi = MutualInformationMatrix(self.k, self.shuffles, self.random_state, self.columns,
                                     self.normalize, self.n_jobs)
        mi.fit(X, Y, feature_names, discrete_features)
        self.scaling_ = mi.scaling_
        return self.fit_mi(mi.mi_matrix_)

    def fit_mi(self, mi: MiMatrix):
        """Threshold and split a precomputed MI matrix."""
        self.mi_matrix_ = mi
        self.adjacency_ = threshold_matrix(mi, self.quantile, self.scope)
        self.factorization_ = block_diagonalize(self.adjacency_)
        self.n_clusters_ = self.factorization_.n_clusters
        self.feature_names_in_ = np.asarray(mi.col_labels, dtype=object)
        self.n_features_in_ = len(mi.col_labels)
        return self

    def transform(self, X):
        """Reorder the input columns of ``X`` into block order."""
        check_is_fitted(self, "factorization_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        names = list(self.feature_names_in_)
        return X[:, [names.index(c) for c in self.factorization_.col_order]]

    def split(self, X) -> dict[int, np.ndarray]:
        """Input columns of ``X`` grouped per cluster id."""
        check_is_fitted(self, "factorization_")
        X = check_array(X, dtype=np.float64)
        names = list(self.feature_names_in_)
        return {c.id: X[:, [names.index(x) for x in c.input_columns]]
                for c in self.factorization_.clusters}

    def error(self, truth: AdjacencyMatrix) -> float:
        """Normalized Frobenius error of the fitted adjacency against ``truth``."""
        check_is_fitted(self, "adjacency_")
        return frobenius_error(self.adjacency_, truth)
