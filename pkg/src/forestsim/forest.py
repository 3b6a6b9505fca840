"""Bootstrap-aggregated regression forest with explicit in-bag/OOB bookkeeping."""

from __future__ import annotations

import gzip
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .tree import TreeParams, TreeStructure, _fit_weighted

MODEL_FORMAT = "forestsim.model"
MODEL_VERSION = 1


def resolve_n_jobs(n_jobs: int | None) -> int:
    if n_jobs is None or n_jobs == -1:
        return os.cpu_count() or 1
    if n_jobs < 1:
        raise ValueError(f"n_jobs must be positive, -1 or None, got {n_jobs}")
    return int(n_jobs)


def parallel_map(func: Callable, items: Sequence, n_jobs: int | None = None) -> list:
    """Order-preserving map over a thread pool (kernels release the GIL)."""
    n_jobs = resolve_n_jobs(n_jobs)
    if n_jobs == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(func, items))


def tree_rng(seed: int, t: int) -> np.random.Generator:
    """Generator for tree ``t``: independent of how many trees are grown."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t,)))


@dataclass(frozen=True, eq=False)
class LeafAssignment:
    """``leaf_ids[i, t]`` is the leaf of tree ``t`` reached by row ``i``."""

    leaf_ids: np.ndarray
    source: str = "external"

    @property
    def n_rows(self) -> int:
        return self.leaf_ids.shape[0]

    @property
    def n_trees(self) -> int:
        return self.leaf_ids.shape[1]


class ForestRegressor(RegressorMixin, BaseEstimator):
    """Random forest regressor that keeps what proximity computations need.

    Each tree is fitted on a bootstrap draw of ``n`` rows; the draw counts
    (``in_bag_``) and the out-of-bag mask (``oob_mask_``) are stored per
    tree. Tree ``t`` draws from a generator derived from
    ``(random_state, t)`` only, so forests grown with different
    ``n_estimators`` share their leading trees and results do not depend on
    ``n_jobs``.

    Parameters
    ----------
    n_estimators : int
    max_depth : int or None
        ``None`` grows each tree without a depth limit.
    min_samples_split : int
    max_features : int, float, "sqrt", "all" or None
        ``None`` (the default) searches every feature at every split.
    bootstrap : bool
        When off every tree sees each row exactly once and nothing is OOB.
    random_state : int
    n_jobs : int or None
        Threads used for fitting and batch queries; ``None`` uses all cores.
    """

    def __init__(self, n_estimators=100, max_depth=None, min_samples_split=2, max_features=None,
                 bootstrap=True, random_state=0, n_jobs=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _tree_params(self) -> TreeParams:
        return TreeParams(self.max_depth, self.min_samples_split, self.max_features)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n = X.shape[0]
        if n < 2:
            raise ValueError(f"need at least 2 training rows, got {n}")
        if self.n_estimators < 1:
            raise ValueError(f"n_estimators must be >= 1, got {self.n_estimators}")
        X = np.ascontiguousarray(X)
        y = np.ascontiguousarray(y)
        params = self._tree_params()
        params.n_candidates(X.shape[1])
        seed = 0 if self.random_state is None else int(self.random_state)

        def grow(t):
            rng = tree_rng(seed, t)
            if self.bootstrap:
                counts = np.bincount(rng.integers(0, n, n), minlength=n)
            else:
                counts = np.ones(n, dtype=np.int64)
            tree = _fit_weighted(X, y, counts.astype(np.float64), params, rng)
            return tree, counts.astype(np.int32)

        grown = parallel_map(grow, range(self.n_estimators), self.n_jobs)
        self.estimators_ = [tree for tree, _ in grown]
        self.in_bag_ = np.stack([counts for _, counts in grown])
        self.n_train_ = n
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def oob_mask_(self) -> np.ndarray:
        """``(T, n)`` boolean: row ``i`` is out of bag for tree ``t``."""
        check_is_fitted(self, "estimators_")
        return self.in_bag_ == 0

    def oob_indices(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.oob_mask_[t])

    def in_bag_indices(self, t: int) -> np.ndarray:
        """The bootstrap multiset of tree ``t`` as a sorted index list."""
        return np.repeat(np.arange(self.n_train_), self.in_bag_[t])

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} columns but the forest was trained on {self.n_features_in_}"
            )
        return np.ascontiguousarray(X)

    def predict(self, X) -> np.ndarray:
        X = self._check_X(X)
        per_tree = parallel_map(lambda tree: tree.predict(X), self.estimators_, self.n_jobs)
        total = np.zeros(X.shape[0])
        for pred in per_tree:
            total += pred
        return total / len(self.estimators_)

    def apply(self, X) -> np.ndarray:
        """``(n_rows, T)`` matrix of dense per-tree leaf ids."""
        X = self._check_X(X)
        cols = parallel_map(lambda tree: tree.apply(X), self.estimators_, self.n_jobs)
        return np.ascontiguousarray(np.stack(cols, axis=1))

    def leaf_assignment(self, X, source: str = "external") -> LeafAssignment:
        return LeafAssignment(self.apply(X), source)

    def oob_predict(self, X_train) -> np.ndarray:
        """Average over the trees for which each training row is OOB (NaN if none)."""
        X = self._check_X(X_train)
        if X.shape[0] != self.n_train_:
            raise ValueError("oob_predict expects the training matrix")
        total = np.zeros(self.n_train_)
        hits = np.zeros(self.n_train_)
        for tree, mask in zip(self.estimators_, self.oob_mask_):
            rows = np.flatnonzero(mask)
            total[rows] += tree.predict(X[rows])
            hits[rows] += 1
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(hits > 0, total / hits, np.nan)

    def oob_score_rmse(self, X_train, y_train) -> float:
        pred = self.oob_predict(X_train)
        ok = np.isfinite(pred)
        return float(np.sqrt(np.mean((pred[ok] - np.asarray(y_train)[ok]) ** 2)))

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimators_")
        return {
            "params": {k: v for k, v in self.get_params().items() if k != "n_jobs"},
            "n_train": self.n_train_,
            "n_features": self.n_features_in_,
            "trees": [tree.to_dict() for tree in self.estimators_],
            "in_bag_counts": self.in_bag_.tolist(),
            "oob": [self.oob_indices(t).tolist() for t in range(len(self.estimators_))],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ForestRegressor":
        forest = cls(**payload["params"])
        forest.estimators_ = [TreeStructure.from_dict(t) for t in payload["trees"]]
        forest.in_bag_ = np.asarray(payload["in_bag_counts"], dtype=np.int32)
        forest.n_train_ = int(payload["n_train"])
        forest.n_features_in_ = int(payload["n_features"])
        for t, oob in enumerate(payload["oob"]):
            if not np.array_equal(np.asarray(oob, dtype=np.intp), forest.oob_indices(t)):
                raise ValueError(f"model file inconsistent: OOB set of tree {t} does not match in-bag counts")
        return forest


def fit_forest(X, y, n_trees=100, tree_params: TreeParams | None = None, bootstrap=True,
               seed=0, n_jobs=None) -> ForestRegressor:
    tree_params = tree_params or TreeParams()
    return ForestRegressor(
        n_estimators=n_trees, max_depth=tree_params.max_depth,
        min_samples_split=tree_params.min_samples_split,
        max_features=tree_params.feature_subset_size, bootstrap=bootstrap,
        random_state=seed, n_jobs=n_jobs,
    ).fit(X, y)


# ---------------------------------------------------------------------------
# permutation importance


@dataclass(frozen=True)
class PermutationImportance:
    names: list[str]
    importances: np.ndarray  # (n_features, n_repeats) RMSE increases
    baseline_rmse: float

    @property
    def mean(self) -> np.ndarray:
        return self.importances.mean(axis=1)

    @property
    def std(self) -> np.ndarray:
        return self.importances.std(axis=1)

    def ranking(self) -> list[tuple[str, float, float]]:
        """``(name, mean, std)`` sorted by mean descending; ties keep input order."""
        order = np.argsort(-self.mean, kind="stable")
        return [(self.names[i], float(self.mean[i]), float(self.std[i])) for i in order]


def _rmse(y, pred) -> float:
    return float(np.sqrt(np.mean((np.asarray(y) - pred) ** 2)))


def permutation_importance(forest: ForestRegressor, X, y, n_repeats: int = 5, seed: int = 0,
                           feature_names: Sequence[str] | None = None,
                           groups: Mapping[str, Sequence[int]] | None = None) -> PermutationImportance:
    """Increase in RMSE when a column (or a group of columns) is shuffled.

    With ``groups`` (e.g. the encoder's ``blocks_``) each group's columns are
    permuted with one shared row permutation, scoring a source feature as a
    whole; otherwise each encoded column is scored on its own.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    X = forest._check_X(X)
    y = np.asarray(y, dtype=np.float64)
    baseline = _rmse(y, forest.predict(X))
    if groups is None:
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        cols = [[j] for j in range(X.shape[1])]
    else:
        names = list(groups)
        cols = [list(groups[name]) for name in names]

    scores = np.zeros((len(cols), n_repeats))
    for g, idx in enumerate(cols):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(g,)))
        for r in range(n_repeats):
            perm = rng.permutation(X.shape[0])
            Xp = X.copy()
            Xp[:, idx] = X[perm][:, idx]
            scores[g, r] = _rmse(y, forest.predict(Xp)) - baseline
    return PermutationImportance(names, scores, baseline)


# ---------------------------------------------------------------------------
# model files


def save_model(path, forest: ForestRegressor, feature_names: Sequence[str], encoder=None,
               extra: dict | None = None) -> None:
    """Write a versioned JSON model document (gzip-compressed when ``path`` ends in .gz)."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "feature_names": list(feature_names),
        "encoder": encoder.to_dict() if encoder is not None else None,
        "forest": forest.to_dict(),
        "extra": extra or {},
    }
    payload = json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8")
    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(payload)
    else:
        path.write_bytes(payload)


@dataclass
class LoadedModel:
    forest: ForestRegressor
    feature_names: list[str]
    encoder: object
    extra: dict


def load_model(path) -> LoadedModel:
    from .dataset import MixedTypeEncoder

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    doc = json.loads(raw)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    forest = ForestRegressor.from_dict(doc["forest"])
    encoder = MixedTypeEncoder.from_dict(doc["encoder"]) if doc["encoder"] else None
    return LoadedModel(forest, doc["feature_names"], encoder, doc["extra"])
