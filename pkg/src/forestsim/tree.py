"""CART regression tree with squared-error splits and dense leaf ids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _kernels

LEAF = _kernels.LEAF


@dataclass(frozen=True)
class TreeParams:
    """Stopping and feature-sampling controls for one tree.

    ``max_depth=None`` grows until the other stopping rules fire.
    ``feature_subset_size`` accepts ``None``/``"all"``, an int, a float
    fraction in (0, 1] or ``"sqrt"``.
    """

    max_depth: int | None = None
    min_samples_split: int = 2
    feature_subset_size: int | float | str | None = None

    def __post_init__(self):
        if self.max_depth is not None and (not isinstance(self.max_depth, (int, np.integer)) or self.max_depth < 1):
            raise ValueError(f"max_depth must be a positive int or None, got {self.max_depth!r}")
        if self.min_samples_split < 2:
            raise ValueError(f"min_samples_split must be >= 2, got {self.min_samples_split}")

    def n_candidates(self, p: int) -> int:
        k = self.feature_subset_size
        if k is None or k == "all":
            return p
        if k == "sqrt":
            return max(1, int(math.sqrt(p)))
        if isinstance(k, float):
            if not 0.0 < k <= 1.0:
                raise ValueError(f"fractional feature_subset_size must be in (0, 1], got {k}")
            return max(1, int(k * p))
        if isinstance(k, (int, np.integer)) and k >= 1:
            return min(int(k), p)
        raise ValueError(f"invalid feature_subset_size {k!r}")


@dataclass(frozen=True, eq=False)
class TreeStructure:
    """Flat node arrays of a fitted tree.

    Internal nodes carry ``feature >= 0``; leaves carry ``feature == -1`` and
    a dense ``leaf_id`` in ``0..n_leaves-1`` (preorder).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    node_depth: np.ndarray

    def __post_init__(self):
        is_leaf = self.feature == LEAF
        leaf_id = np.full(len(self.feature), -1, dtype=np.int64)
        leaf_id[is_leaf] = np.arange(int(is_leaf.sum()))
        object.__setattr__(self, "leaf_id", leaf_id)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    @property
    def depth(self) -> int:
        return int(self.node_depth.max())

    def nodes_of(self, X: np.ndarray) -> np.ndarray:
        return _kernels.route(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.nodes_of(X)]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_id[self.nodes_of(X)]

    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature != LEAF])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "weight": self.weight.tolist(),
            "depth": self.node_depth.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TreeStructure":
        return cls(
            feature=np.asarray(payload["feature"], dtype=np.int64),
            threshold=np.asarray(payload["threshold"], dtype=np.float64),
            left=np.asarray(payload["left"], dtype=np.int64),
            right=np.asarray(payload["right"], dtype=np.int64),
            value=np.asarray(payload["value"], dtype=np.float64),
            weight=np.asarray(payload["weight"], dtype=np.float64),
            node_depth=np.asarray(payload["depth"], dtype=np.int64),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TreeStructure):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("feature", "threshold", "left", "right", "value", "weight", "node_depth")
        )


def fit_tree(X, y, sample_indices, params: TreeParams, rng: np.random.Generator) -> TreeStructure:
    """Fit a tree on the multiset ``sample_indices`` of rows of ``X``.

    Repeated indices weight a row by its multiplicity. ``rng`` only seeds
    per-node feature sampling, so it is unused when every feature is searched.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    sample_indices = np.asarray(sample_indices, dtype=np.int64)
    if sample_indices.size == 0:
        raise ValueError("sample_indices is empty")
    if sample_indices.min() < 0 or sample_indices.max() >= X.shape[0]:
        raise IndexError("sample_indices out of range")
    counts = np.bincount(sample_indices, minlength=X.shape[0]).astype(np.float64)
    return _fit_weighted(X, y, counts, params, rng)


def _fit_weighted(X, y, counts, params: TreeParams, rng) -> TreeStructure:
    support = np.flatnonzero(counts > 0).astype(np.int64)
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    seed = int(rng.integers(0, 2**31 - 1))
    arrays = _kernels.build_tree(
        X, y, counts, support, max_depth, float(params.min_samples_split),
        params.n_candidates(X.shape[1]), seed,
    )
    return TreeStructure(*arrays)


class RegressionTree(RegressorMixin, BaseEstimator):
    """Single squared-error regression tree.

    Parameters
    ----------
    max_depth : int or None
        Depth limit; ``None`` for unbounded.
    min_samples_split : int
        Nodes whose (weighted) size is below this become leaves.
    max_features : int, float, "sqrt", "all" or None
        Candidate features searched per split.
    random_state : int or None
        Seeds feature sampling.
    """

    def __init__(self, max_depth=None, min_samples_split=2, max_features=None, random_state=None):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if sample_weight is None:
            sample_weight = np.ones(len(y))
        params = TreeParams(self.max_depth, self.min_samples_split, self.max_features)
        rng = np.random.default_rng(self.random_state)
        self.tree_ = _fit_weighted(
            np.ascontiguousarray(X), np.ascontiguousarray(y),
            np.asarray(sample_weight, dtype=np.float64), params, rng,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "tree_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, tree was fitted with {self.n_features_in_}")
        return np.ascontiguousarray(X)

    def predict(self, X):
        return self.tree_.predict(self._check(X))

    def apply(self, X):
        return self.tree_.apply(self._check(X))

    def get_depth(self) -> int:
        check_is_fitted(self, "tree_")
        return self.tree_.depth

    def get_n_leaves(self) -> int:
        check_is_fitted(self, "tree_")
        return self.tree_.n_leaves


def predict_tree(tree: TreeStructure, x) -> float:
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    return float(tree.predict(x)[0])


def leaf_index(tree: TreeStructure, x) -> int:
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    return int(tree.apply(x)[0])
