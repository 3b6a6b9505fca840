"""Classical baseline metrics: Euclidean on the encoded matrix, Gower on raw rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import DataValidationError, FeatureSchema, NUMERIC
from .proximity import DistanceMatrix


@dataclass(frozen=True)
class ZScoreStats:
    """Per-column centring/scaling; columns outside ``columns`` are left as is."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, columns=None) -> "ZScoreStats":
        X = np.asarray(X, dtype=np.float64)
        mean = np.zeros(X.shape[1])
        scale = np.ones(X.shape[1])
        cols = np.arange(X.shape[1]) if columns is None else np.asarray(columns, dtype=np.intp)
        if cols.size:
            mean[cols] = X[:, cols].mean(axis=0)
            sd = X[:, cols].std(axis=0)
            scale[cols] = np.where(sd > 0, sd, 1.0)
        return cls(mean, scale)

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


def euclidean_matrix(A, B, scaling: ZScoreStats | None = None) -> DistanceMatrix:
    """``(m, n)`` Euclidean distances between rows of ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} columns")
    if scaling is not None:
        A, B = scaling.apply(A), scaling.apply(B)
    name = "d_euclidean_scaled" if scaling is not None else "d_euclidean"
    return DistanceMatrix(cdist(A, B, metric="euclidean"), name)


@dataclass(frozen=True)
class GowerRanges:
    """Training-split (min, max) of each numeric column."""

    columns: tuple[str, ...]
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(cls, X: pd.DataFrame, schema: FeatureSchema) -> "GowerRanges":
        cols = tuple(schema.numeric)
        if cols:
            vals = X[list(cols)].to_numpy(dtype=np.float64)
            return cls(cols, vals.min(axis=0), vals.max(axis=0))
        return cls(cols, np.zeros(0), np.zeros(0))

    @property
    def span(self) -> np.ndarray:
        return self.high - self.low


def _check_rows(X, schema: FeatureSchema) -> None:
    if not isinstance(X, pd.DataFrame) or list(X.columns) != schema.names:
        got = list(X.columns) if isinstance(X, pd.DataFrame) else type(X).__name__
        raise DataValidationError(f"rows {got} do not match schema {schema.names}")


def gower_matrix(A: pd.DataFrame, B: pd.DataFrame, schema: FeatureSchema,
                 ranges: GowerRanges) -> DistanceMatrix:
    """Unweighted Gower distance between raw mixed-type rows.

    Numeric columns contribute ``|a - b| / range`` clipped to [0, 1] (zero for
    a constant training column); categorical columns contribute 0 on a match
    and 1 otherwise. The result is the mean over all schema columns.
    """
    _check_rows(A, schema)
    _check_rows(B, schema)
    if ranges.columns != tuple(schema.numeric):
        raise DataValidationError("Gower ranges were fitted on a different schema")
    total = np.zeros((len(A), len(B)))
    span = dict(zip(ranges.columns, ranges.span))
    for name, kind in schema.columns:
        if kind == NUMERIC:
            r = span[name]
            if r <= 0:
                continue
            a = A[name].to_numpy(dtype=np.float64)
            b = B[name].to_numpy(dtype=np.float64)
            total += np.minimum(np.abs(a[:, None] - b[None, :]) / r, 1.0)
        else:
            codes, _ = pd.factorize(pd.concat([A[name], B[name]], ignore_index=True))
            a, b = codes[: len(A)], codes[len(A):]
            total += a[:, None] != b[None, :]
    return DistanceMatrix(total / len(schema.columns), "d_gower")


class EuclideanDistance(TransformerMixin, BaseEstimator):
    """Transformer mapping encoded rows to their distances from the fitted rows.

    ``scale=True`` z-scores the ``numeric_columns`` (default: all columns)
    with statistics of the fitted rows before measuring distance.
    """

    def __init__(self, scale=True, numeric_columns=None):
        self.scale = scale
        self.numeric_columns = numeric_columns

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.reference_ = X.copy()
        self.stats_ = ZScoreStats.fit(X, self.numeric_columns) if self.scale else None
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "reference_")
        return euclidean_matrix(X, self.reference_, self.stats_).values


class GowerDistance(TransformerMixin, BaseEstimator):
    """Transformer mapping raw rows to Gower distances from the fitted rows."""

    def __init__(self, schema: FeatureSchema | None = None):
        self.schema = schema

    def fit(self, X: pd.DataFrame, y=None):
        if self.schema is None:
            raise ValueError("GowerDistance requires a schema")
        _check_rows(X, self.schema)
        self.reference_ = X.reset_index(drop=True).copy()
        self.ranges_ = GowerRanges.fit(X, self.schema)
        return self

    def transform(self, X: pd.DataFrame) -> np.ndarray:
        check_is_fitted(self, "ranges_")
        return gower_matrix(X, self.reference_, self.schema, self.ranges_).values
