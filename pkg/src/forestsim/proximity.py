"""Forest proximities (all-tree and out-of-bag) and the distances they induce.

Counts are accumulated as integers and divided once, so the bucketed fast
path and the literal pairwise oracles agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .forest import ForestRegressor, LeafAssignment, parallel_map, resolve_n_jobs

ORIGINAL = "original"
OOB = "oob"


@dataclass(eq=False)
class ProximityMatrix:
    """Co-occurrence counts over a normalizing denominator.

    ``counts[i, j]`` is the number of counted trees in which ``i`` and ``j``
    share a leaf. For ``kind="original"`` the denominator is ``n_trees``;
    for ``kind="oob"`` it is ``denominators`` (broadcast against
    ``counts``). Entries with a zero denominator are undefined and read as
    NaN in :attr:`values`. ``square`` marks a train-vs-train matrix, whose
    OOB diagonal is fixed to 1.
    """

    counts: np.ndarray
    kind: str
    n_trees: int
    denominators: np.ndarray | None = None
    square: bool = True

    @cached_property
    def values(self) -> np.ndarray:
        if self.kind == ORIGINAL:
            return self.counts / float(self.n_trees)
        den = np.broadcast_to(self.denominators, self.counts.shape)
        out = np.full(self.counts.shape, np.nan)
        np.divide(self.counts, den, out=out, where=den > 0)
        if self.square:
            np.fill_diagonal(out, 1.0)
        return out

    @property
    def shape(self):
        return self.counts.shape

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def n_undefined_pairs(self) -> int:
        """Undefined entries; unordered pairs for square matrices."""
        undefined = int(np.isnan(self.values).sum())
        return undefined // 2 if self.square else undefined


@dataclass(eq=False)
class DistanceMatrix:
    values: np.ndarray
    metric_name: str

    @property
    def shape(self):
        return self.values.shape


def _leaves(leafs) -> np.ndarray:
    arr = leafs.leaf_ids if isinstance(leafs, LeafAssignment) else leafs
    return np.ascontiguousarray(arr, dtype=np.int64)


def _row_blocks(m: int, n_jobs: int | None) -> list[tuple[int, int]]:
    n_blocks = max(1, min(m, 4 * resolve_n_jobs(n_jobs)))
    edges = np.linspace(0, m, n_blocks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _cooccurrence(row_leaves, col_leaves, row_mask=None, col_mask=None, n_jobs=None) -> np.ndarray:
    m, T = row_leaves.shape
    n = col_leaves.shape[0]
    if col_leaves.shape[1] != T:
        raise ValueError(f"leaf matrices disagree on tree count: {T} vs {col_leaves.shape[1]}")
    if row_mask is None:
        row_mask = np.ones((m, T), dtype=np.bool_)
    if col_mask is None:
        col_mask = np.ones((n, T), dtype=np.bool_)
    row_mask = np.ascontiguousarray(row_mask, dtype=np.bool_)
    col_mask = np.ascontiguousarray(col_mask, dtype=np.bool_)
    counts = np.zeros((m, n), dtype=np.int32)

    def run(block):
        a, b = block
        _kernels.cooccurrence_rows(row_leaves[a:b], col_leaves, row_mask[a:b], col_mask, counts[a:b])

    parallel_map(run, _row_blocks(m, n_jobs), n_jobs)
    return counts


def _oob_mask(forest_or_mask) -> np.ndarray:
    """``(n_train, T)`` boolean OOB indicator."""
    if isinstance(forest_or_mask, ForestRegressor):
        return np.ascontiguousarray(forest_or_mask.oob_mask_.T)
    return np.ascontiguousarray(np.asarray(forest_or_mask, dtype=np.bool_).T)


def _joint_counts(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # 0/1 float products are exact integers far below 2**53
    return np.rint(a.astype(np.float64) @ b.astype(np.float64).T).astype(np.int32)


def proximity(leafs, n_jobs: int | None = None) -> ProximityMatrix:
    """Fraction of trees in which each pair of rows shares a leaf."""
    L = _leaves(leafs)
    return ProximityMatrix(_cooccurrence(L, L, n_jobs=n_jobs), ORIGINAL, L.shape[1], square=True)


def proximity_bruteforce(leafs) -> ProximityMatrix:
    """Pair-by-pair evaluation of the proximity definition (test oracle).

    Visits all ``n * n`` ordered pairs and counts matching leaves across trees.
    """
    L = _leaves(leafs)
    n, T = L.shape
    counts = np.zeros((n, n), dtype=np.int32)
    for i in range(n):
        for j in range(n):
            counts[i, j] = np.count_nonzero(L[j] == L[i])
    return ProximityMatrix(counts, ORIGINAL, T, square=True)


def oob_proximity(leafs, forest, n_jobs: int | None = None) -> ProximityMatrix:
    """Proximity restricted to trees in which both rows are out of bag.

    ``forest`` is a fitted :class:`ForestRegressor` or a ``(T, n)`` boolean
    OOB mask. Pairs that are never jointly OOB are undefined (NaN).
    """
    L = _leaves(leafs)
    oob = _oob_mask(forest)
    if oob.shape != L.shape:
        raise ValueError(f"leaf matrix {L.shape} does not match OOB mask {oob.shape}; "
                         "OOB proximity needs the forest's own training rows")
    counts = _cooccurrence(L, L, oob, oob, n_jobs=n_jobs)
    den = _joint_counts(oob, oob)
    return ProximityMatrix(counts, OOB, L.shape[1], den, square=True)


def oob_proximity_bruteforce(leafs, forest) -> ProximityMatrix:
    """Literal double sum over ``S_i`` for every ordered pair (test oracle)."""
    L = _leaves(leafs)
    oob = _oob_mask(forest)
    n, T = L.shape
    num = np.zeros((n, n), dtype=np.int32)
    den = np.zeros((n, n), dtype=np.int32)
    for i in range(n):
        S_i = np.flatnonzero(oob[i])
        for j in range(n):
            joint = oob[j, S_i]
            den[i, j] = np.count_nonzero(joint)
            num[i, j] = np.count_nonzero(joint & (L[j, S_i] == L[i, S_i]))
    return ProximityMatrix(num, OOB, T, den, square=True)


def external_proximity(forest, train_leafs, external_leafs, mode: str = ORIGINAL,
                       n_jobs: int | None = None) -> ProximityMatrix:
    """``(m, n)`` proximities of unseen rows against the training rows.

    ``mode="original"`` counts every tree. ``mode="oob"`` counts only trees
    for which the training row is OOB, normalized by how many such trees
    there are; a training row that is never OOB gives an undefined column.
    """
    train = _leaves(train_leafs)
    ext = _leaves(external_leafs)
    if ext.shape[1] != train.shape[1]:
        raise ValueError(f"tree count mismatch: {ext.shape[1]} vs {train.shape[1]}")
    T = train.shape[1]
    if mode == ORIGINAL:
        return ProximityMatrix(_cooccurrence(ext, train, n_jobs=n_jobs), ORIGINAL, T, square=False)
    if mode != OOB:
        raise ValueError(f"mode must be 'original' or 'oob', got {mode!r}")
    oob = _oob_mask(forest)
    if oob.shape != train.shape:
        raise ValueError(f"training leaf matrix {train.shape} does not match OOB mask {oob.shape}")
    counts = _cooccurrence(ext, train, None, oob, n_jobs=n_jobs)
    den = oob.sum(axis=1).astype(np.int32)[None, :]
    return ProximityMatrix(counts, OOB, T, den, square=False)


def external_proximity_bruteforce(forest, train_leafs, external_leafs, mode: str = ORIGINAL) -> ProximityMatrix:
    """Literal per-pair evaluation of :func:`external_proximity` (test oracle)."""
    train = _leaves(train_leafs)
    ext = _leaves(external_leafs)
    m, T = ext.shape
    n = train.shape[0]
    oob = _oob_mask(forest) if mode == OOB else np.ones((n, T), dtype=bool)
    num = np.zeros((m, n), dtype=np.int32)
    den = np.zeros((m, n), dtype=np.int32)
    for a in range(m):
        for j in range(n):
            den[a, j] = np.count_nonzero(oob[j])
            num[a, j] = np.count_nonzero(oob[j] & (ext[a] == train[j]))
    if mode == ORIGINAL:
        return ProximityMatrix(num, ORIGINAL, T, square=False)
    return ProximityMatrix(num, OOB, T, den, square=False)


def to_distance(prox: ProximityMatrix, metric_name: str | None = None) -> DistanceMatrix:
    """``1 - proximity``; undefined entries become the maximal distance 1."""
    d = 1.0 - prox.values
    d[np.isnan(d)] = 1.0
    if prox.square:
        np.fill_diagonal(d, 0.0)
    name = metric_name or ("d_prox" if prox.kind == ORIGINAL else "d_prox_oob")
    return DistanceMatrix(d, name)


class ProximityDistance(TransformerMixin, BaseEstimator):
    """Learn a supervised distance with a forest and map rows onto it.

    ``fit`` trains a :class:`ForestRegressor` on ``(X, y)``. ``transform``
    returns the ``(m, n)`` distance from new rows to the training rows;
    ``fit_transform`` returns the square training matrix. Pair either with
    :class:`~forestsim.knn.PrecomputedKNNRegressor`.
    """

    def __init__(self, oob=False, n_estimators=100, max_depth=None, min_samples_split=2,
                 max_features=None, random_state=0, n_jobs=None):
        self.oob = oob
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        self.forest_ = ForestRegressor(
            n_estimators=self.n_estimators, max_depth=self.max_depth,
            min_samples_split=self.min_samples_split, max_features=self.max_features,
            random_state=self.random_state, n_jobs=self.n_jobs,
        ).fit(X, y)
        self.train_leaves_ = self.forest_.apply(X)
        return self

    def train_matrix(self) -> ProximityMatrix:
        check_is_fitted(self, "train_leaves_")
        if self.oob:
            return oob_proximity(self.train_leaves_, self.forest_, self.n_jobs)
        return proximity(self.train_leaves_, self.n_jobs)

    def fit_transform(self, X, y=None, **fit_params):
        return to_distance(self.fit(X, y).train_matrix()).values

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "train_leaves_")
        ext = self.forest_.apply(X)
        mode = OOB if self.oob else ORIGINAL
        return to_distance(external_proximity(self.forest_, self.train_leaves_, ext, mode, self.n_jobs)).values
