"""KNN regression over precomputed distance matrices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

DISTANCE = "distance"
UNIFORM = "uniform"


@dataclass(frozen=True)
class KnnConfig:
    k: int
    weighting: str = DISTANCE
    self_exclusion: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.weighting not in (DISTANCE, UNIFORM):
            raise ValueError(f"weighting must be 'distance' or 'uniform', got {self.weighting!r}")


def _check_distances(D, n_targets: int, self_exclusion: bool) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError("distance matrix must be 2-D")
    if D.shape[1] != n_targets:
        raise ValueError(f"distance matrix has {D.shape[1]} columns but there are {n_targets} targets")
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix contains non-finite entries; map undefined pairs first")
    if np.any(D < 0):
        raise ValueError("distance matrix contains negative distances")
    if self_exclusion and D.shape[0] != D.shape[1]:
        raise ValueError("self exclusion needs a square train-vs-train matrix")
    return D


def neighbour_order(D: np.ndarray, self_exclusion: bool = False) -> np.ndarray:
    """Columns of each row sorted by distance, ties to the lower index.

    With ``self_exclusion`` the diagonal entry is dropped, leaving ``n - 1``
    candidates per row.
    """
    if self_exclusion:
        D = D.copy()
        np.fill_diagonal(D, np.inf)
        return np.argsort(D, axis=1, kind="stable")[:, :-1]
    return np.argsort(D, axis=1, kind="stable")


def knn_sweep(D, y_train, k_values: Sequence[int], weighting: str = DISTANCE,
              self_exclusion: bool = False) -> dict[int, np.ndarray]:
    """Predictions for several ``k`` from a single sort of ``D``.

    Inverse-distance weighting, except that a query with any selected
    neighbour at distance 0 takes the mean target of those zero-distance
    neighbours.
    """
    y_train = np.asarray(y_train, dtype=np.float64)
    D = _check_distances(D, len(y_train), self_exclusion)
    k_values = [int(k) for k in k_values]
    n_candidates = D.shape[1] - (1 if self_exclusion else 0)
    for k in k_values:
        KnnConfig(k, weighting, self_exclusion)
        if k > n_candidates:
            raise ValueError(f"k={k} exceeds the {n_candidates} available neighbours")
    kmax = max(k_values)
    order = neighbour_order(D, self_exclusion)[:, :kmax]
    d = np.take_along_axis(D, order, axis=1)
    yk = y_train[order]

    if weighting == UNIFORM:
        csum = np.cumsum(yk, axis=1)
        return {k: csum[:, k - 1] / k for k in k_values}

    zero = d == 0.0
    with np.errstate(divide="ignore"):
        w = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, d))
    cw = np.cumsum(w, axis=1)
    cwy = np.cumsum(w * yk, axis=1)
    cz = np.cumsum(zero, axis=1)
    czy = np.cumsum(zero * yk, axis=1)
    out = {}
    for k in k_values:
        nz = cz[:, k - 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            weighted = cwy[:, k - 1] / cw[:, k - 1]
            exact = czy[:, k - 1] / nz
        out[k] = np.where(nz > 0, exact, weighted)
    return out


def knn_predict(D, y_train, config: KnnConfig | int) -> np.ndarray:
    """Predict one target per row of the ``(m, n)`` query-to-train matrix ``D``."""
    if isinstance(config, (int, np.integer)):
        config = KnnConfig(int(config))
    return knn_sweep(D, y_train, [config.k], config.weighting, config.self_exclusion)[config.k]


class PrecomputedKNNRegressor(RegressorMixin, BaseEstimator):
    """KNN regressor whose inputs are distance matrices to the training rows.

    ``fit`` takes the ``(n, n)`` train matrix (only its width is used) and
    targets; ``predict`` takes an ``(m, n)`` query matrix. Set
    ``exclude_self=True`` when predicting the training rows themselves from
    the square matrix.
    """

    def __init__(self, n_neighbors=5, weights=DISTANCE, exclude_self=False):
        self.n_neighbors = n_neighbors
        self.weights = weights
        self.exclude_self = exclude_self

    def fit(self, D, y):
        D = np.asarray(D, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if D.shape[1] != len(y):
            raise ValueError("training distance matrix width must equal the number of targets")
        self.y_train_ = y.copy()
        self.n_train_ = len(y)
        return self

    def predict(self, D):
        check_is_fitted(self, "y_train_")
        cfg = KnnConfig(self.n_neighbors, self.weights, self.exclude_self)
        return knn_predict(D, self.y_train_, cfg)
