"""Error metrics, K-sweeps over distance metrics and grid-search cross-validation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset, EncodedMatrix, kfold_indices, one_hot_encode
from .forest import ForestRegressor
from .knn import DISTANCE, knn_sweep

UNBOUNDED = None
UNBOUNDED_LABEL = "unbounded"
DEFAULT_DEPTH_GRID = (2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, UNBOUNDED)
DEFAULT_TREES_GRID = tuple(range(100, 2001, 250))
DEFAULT_K_VALUES = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 15, 20, 25, 30, 40, 50)


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {len(y)} targets vs {len(yhat)} predictions")
    if y.size == 0:
        raise ValueError("need at least one target")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def rmse(y, yhat) -> float:
    return math.sqrt(mse(y, yhat))


def mape(y, yhat) -> float:
    """Mean absolute percentage error as a fraction (0.15 means 15%)."""
    y, yhat = _pair(y, yhat)
    if np.any(y == 0):
        raise ValueError("MAPE is undefined when a target equals 0")
    return float(np.mean(np.abs((y - yhat) / y)))


def depth_label(depth) -> str:
    return UNBOUNDED_LABEL if depth is None else str(int(depth))


def parse_depth(value):
    """Inverse of :func:`depth_label`; also accepts JSON ``null``."""
    if value is None or (isinstance(value, str) and value.lower() in (UNBOUNDED_LABEL, "none", "null")):
        return UNBOUNDED
    depth = int(value)
    if depth < 1:
        raise ValueError(f"max depth must be >= 1, got {value!r}")
    return depth


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# K sweeps


@dataclass(frozen=True)
class Baseline:
    train_rmse: float
    train_mape: float
    test_rmse: float
    test_mape: float

    @classmethod
    def from_predictions(cls, y_train, pred_train, y_test, pred_test) -> "Baseline":
        return cls(rmse(y_train, pred_train), mape(y_train, pred_train),
                   rmse(y_test, pred_test), mape(y_test, pred_test))

    def to_dict(self) -> dict:
        return {"train_rmse": self.train_rmse, "train_mape": self.train_mape,
                "test_rmse": self.test_rmse, "test_mape": self.test_mape}


COLUMNS = ("train_rmse", "train_mape", "test_rmse", "test_mape")


@dataclass
class EvalReport:
    """Per-K train/test errors of KNN under one distance metric."""

    metric_name: str
    k_values: list[int]
    train_rmse: np.ndarray
    train_mape: np.ndarray
    test_rmse: np.ndarray
    test_mape: np.ndarray
    baseline: Baseline | None = None
    self_exclusion: bool = True
    weighting: str = DISTANCE

    def best_k(self, column: str = "test_rmse") -> int:
        """Smallest K attaining the minimum of ``column``."""
        return self.k_values[int(np.argmin(getattr(self, column)))]

    def at_best(self, column: str = "test_rmse") -> float:
        return float(np.min(getattr(self, column)))

    def rows(self):
        for i, k in enumerate(self.k_values):
            yield k, *(getattr(self, c)[i] for c in COLUMNS)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("k",) + COLUMNS)
            for k, *vals in self.rows():
                w.writerow([k] + [_fmt(v) for v in vals])

    def summary(self) -> dict:
        return {
            "metric": self.metric_name,
            "best_k": {c: self.best_k(c) for c in COLUMNS},
            "best": {c: self.at_best(c) for c in COLUMNS},
            "self_exclusion": self.self_exclusion,
            "weighting": self.weighting,
        }


def k_sweep(distance_sets: Mapping[str, tuple[np.ndarray, np.ndarray]], y_train, y_test,
            k_values: Sequence[int] = DEFAULT_K_VALUES, baseline: Baseline | None = None,
            self_exclusion: bool = True, weighting: str = DISTANCE) -> dict[str, EvalReport]:
    """Train and test KNN errors for each metric and each K.

    ``distance_sets`` maps a metric name to ``(train n x n, test m x n)``
    matrices computed on the same split. Train errors predict each training
    row from its neighbours, skipping the row itself when ``self_exclusion``.
    """
    y_train = np.asarray(y_train, dtype=np.float64)
    y_test = np.asarray(y_test, dtype=np.float64)
    k_values = sorted({int(k) for k in k_values})
    if not k_values:
        raise ValueError("k_values is empty")
    reports = {}
    for name, (D_train, D_test) in distance_sets.items():
        D_train = np.asarray(D_train)
        D_test = np.asarray(D_test)
        n = len(y_train)
        if D_train.shape != (n, n):
            raise ValueError(f"{name}: train matrix shape {D_train.shape} != {(n, n)}")
        if D_test.shape != (len(y_test), n):
            raise ValueError(f"{name}: test matrix shape {D_test.shape} != {(len(y_test), n)}")
        tr = knn_sweep(D_train, y_train, k_values, weighting, self_exclusion)
        te = knn_sweep(D_test, y_train, k_values, weighting, False)
        reports[name] = EvalReport(
            metric_name=name,
            k_values=k_values,
            train_rmse=np.array([rmse(y_train, tr[k]) for k in k_values]),
            train_mape=np.array([mape(y_train, tr[k]) for k in k_values]),
            test_rmse=np.array([rmse(y_test, te[k]) for k in k_values]),
            test_mape=np.array([mape(y_test, te[k]) for k in k_values]),
            baseline=baseline,
            self_exclusion=self_exclusion,
            weighting=weighting,
        )
    return reports


def rank_metrics(reports: Mapping[str, EvalReport], column: str = "test_rmse") -> list[tuple[str, int, float]]:
    """``(metric, best_k, best value)`` sorted best-first; ties keep input order."""
    rows = [(name, rep.best_k(column), rep.at_best(column)) for name, rep in reports.items()]
    return sorted(rows, key=lambda r: r[2])


# ---------------------------------------------------------------------------
# grid search


@dataclass
class GridSearchResult:
    best_params: dict
    cv_table: list[dict] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("max_depth", "n_trees", "mean_val_rmse", "std_val_rmse", "mean_val_mape"))
            for row in self.cv_table:
                w.writerow([depth_label(row["max_depth"]), row["n_trees"], _fmt(row["mean_val_rmse"]),
                            _fmt(row["std_val_rmse"]), _fmt(row["mean_val_mape"])])


def _depth_key(depth) -> float:
    return math.inf if depth is None else depth


def grid_search_cv(train: Dataset | EncodedMatrix, depth_grid: Sequence = DEFAULT_DEPTH_GRID,
                   trees_grid: Sequence[int] = DEFAULT_TREES_GRID, k_folds: int = 5, seed: int = 0,
                   min_samples_split: int = 2, max_features=None, n_jobs=None) -> GridSearchResult:
    """Mean validation RMSE over ``k_folds`` folds for every (depth, trees) pair.

    For each depth and fold one forest with ``max(trees_grid)`` trees is
    grown; smaller tree counts are scored on its leading trees, which is
    exactly the forest that count would have produced (per-tree seeding).
    The best point minimizes mean validation RMSE, ties going to the
    smaller depth and then the fewer trees.
    """
    depth_grid = [parse_depth(d) for d in depth_grid]
    trees_grid = sorted({int(t) for t in trees_grid})
    if not depth_grid or not trees_grid:
        raise ValueError("grids must be non-empty")
    if trees_grid[0] < 1:
        raise ValueError("tree counts must be positive")
    enc = one_hot_encode(train) if isinstance(train, Dataset) else train
    X, y = enc.X, enc.y
    folds = kfold_indices(np.arange(len(y)), k_folds, seed)
    t_max = trees_grid[-1]

    table = []
    for depth in depth_grid:
        rmse_by_t = {t: [] for t in trees_grid}
        mape_by_t = {t: [] for t in trees_grid}
        for tr_idx, va_idx in folds:
            forest = ForestRegressor(
                n_estimators=t_max, max_depth=depth, min_samples_split=min_samples_split,
                max_features=max_features, random_state=seed, n_jobs=n_jobs,
            ).fit(X[tr_idx], y[tr_idx])
            Xv = np.ascontiguousarray(X[va_idx])
            total = np.zeros(len(va_idx))
            wanted = set(trees_grid)
            for t, tree in enumerate(forest.estimators_, start=1):
                total += tree.predict(Xv)
                if t in wanted:
                    pred = total / t
                    rmse_by_t[t].append(rmse(y[va_idx], pred))
                    mape_by_t[t].append(mape(y[va_idx], pred))
        for t in trees_grid:
            table.append({
                "max_depth": depth,
                "n_trees": t,
                "mean_val_rmse": float(np.mean(rmse_by_t[t])),
                "std_val_rmse": float(np.std(rmse_by_t[t])),
                "mean_val_mape": float(np.mean(mape_by_t[t])),
            })
    best = min(table, key=lambda r: (r["mean_val_rmse"], _depth_key(r["max_depth"]), r["n_trees"]))
    return GridSearchResult({"max_depth": best["max_depth"], "n_trees": best["n_trees"]}, table)
