"""Mixed-type tabular data: schema, CSV loading, one-hot encoding, splits and a
synthetic corporate-bond generator."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

NUMERIC = "numeric"
CATEGORICAL = "categorical"
Kind = Literal["numeric", "categorical"]


class DataValidationError(ValueError):
    """Raised when input data violates the schema or the no-missing rule."""


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered input columns plus the name of the numeric target column."""

    columns: tuple[tuple[str, Kind], ...]
    target: str

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple((str(n), str(k)) for n, k in self.columns))
        names = [name for name, _ in self.columns]
        if len(set(names)) != len(names):
            raise DataValidationError(f"duplicate column names in schema: {names}")
        for name, kind in self.columns:
            if kind not in (NUMERIC, CATEGORICAL):
                raise DataValidationError(f"column {name!r} has unknown kind {kind!r}")
        if self.target in names:
            raise DataValidationError(f"target {self.target!r} is also listed as an input column")

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.columns]

    @property
    def numeric(self) -> list[str]:
        return [name for name, kind in self.columns if kind == NUMERIC]

    @property
    def categorical(self) -> list[str]:
        return [name for name, kind in self.columns if kind == CATEGORICAL]

    def kind_of(self, name: str) -> str:
        return dict(self.columns)[name]

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": n, "kind": k} for n, k in self.columns],
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureSchema":
        try:
            cols = tuple((c["name"], c["kind"]) for c in payload["columns"])
            return cls(columns=cols, target=payload["target"])
        except (KeyError, TypeError) as exc:
            raise DataValidationError(f"malformed schema document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Dataset:
    """Validated raw rows (one DataFrame column per schema input) and target."""

    schema: FeatureSchema
    X: pd.DataFrame
    y: np.ndarray

    def __post_init__(self):
        _validate_frame(self.X, self.schema)
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1 or len(y) != len(self.X):
            raise DataValidationError("target length does not match row count")
        if not np.all(np.isfinite(y)):
            raise DataValidationError("target contains non-finite values")
        if np.any(y == 0.0):
            raise DataValidationError("target zero: MAPE is undefined when a target equals 0")
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.schema, self.X.iloc[indices].reset_index(drop=True), self.y[indices])

    def to_frame(self) -> pd.DataFrame:
        frame = self.X.copy()
        frame[self.schema.target] = self.y
        return frame

    def save_csv(self, path) -> None:
        """Write a header row plus one line per row; floats use ``repr`` so reloading is exact."""
        names = self.schema.names
        numeric = set(self.schema.numeric)
        cols = [self.X[name].tolist() for name in names]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names + [self.schema.target])
            for i, target in enumerate(self.y.tolist()):
                row = [repr(float(col[i])) if name in numeric else col[i] for name, col in zip(names, cols)]
                w.writerow(row + [repr(target)])


def _validate_frame(frame: pd.DataFrame, schema: FeatureSchema) -> None:
    if list(frame.columns) != schema.names:
        raise DataValidationError(
            f"columns {list(frame.columns)} do not match schema {schema.names}"
        )
    for name, kind in schema.columns:
        col = frame[name]
        if kind == NUMERIC:
            if not pd.api.types.is_float_dtype(col):
                raise DataValidationError(f"numeric column {name!r} must be float dtype")
            if not np.all(np.isfinite(col.to_numpy())):
                raise DataValidationError(f"missing value or non-finite entry in {name!r}")
        else:
            if not all(isinstance(v, str) for v in col):
                raise DataValidationError(f"categorical column {name!r} must hold strings")
            if any(v == "" for v in col):
                raise DataValidationError(f"missing value in categorical column {name!r}")


def _parse_float(cell: str) -> float:
    # pandas' fast parser is not round-trip exact; float() is
    try:
        return float(cell)
    except ValueError:
        return np.nan


def load_csv(path, schema: FeatureSchema) -> Dataset:
    """Read a comma-separated file with a header row and validate it against ``schema``.

    Blank cells are rejected (no imputation), numeric cells must parse as
    finite reals, and a target equal to zero is rejected because MAPE divides
    by the target.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    needed = schema.names + [schema.target]
    missing = [c for c in needed if c not in raw.columns]
    if missing:
        raise DataValidationError(f"missing column(s) in {path}: {missing}")

    data = {}
    for name in needed:
        cells = raw[name].str.strip()
        blank = np.flatnonzero((cells == "").to_numpy())
        if blank.size:
            raise DataValidationError(
                f"missing value in column {name!r} at data row {int(blank[0]) + 1}"
            )
        kind = NUMERIC if name == schema.target else schema.kind_of(name)
        if kind == NUMERIC:
            values = np.array([_parse_float(c) for c in cells], dtype=np.float64)
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                r = int(bad[0])
                raise DataValidationError(
                    f"non-numeric cell {cells.iloc[r]!r} in numeric column {name!r} "
                    f"at data row {r + 1}"
                )
            data[name] = values
        else:
            data[name] = cells.to_numpy(dtype=object)

    y = data.pop(schema.target)
    if np.any(y == 0.0):
        r = int(np.flatnonzero(y == 0.0)[0])
        raise DataValidationError(
            f"target zero in column {schema.target!r} at data row {r + 1}: "
            "MAPE is undefined when a target equals 0"
        )
    frame = pd.DataFrame({name: data[name] for name in schema.names})
    return Dataset(schema, frame, y)


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class EncodedMatrix:
    """Dense design matrix with numeric columns first, then indicator blocks."""

    X: np.ndarray
    feature_names: list[str]
    y: np.ndarray
    blocks: dict[str, list[int]] = field(default_factory=dict)

    @property
    def shape(self):
        return self.X.shape


class MixedTypeEncoder(TransformerMixin, BaseEstimator):
    """One-hot encoder for a :class:`FeatureSchema`.

    Numeric columns pass through unchanged in schema order; each categorical
    column becomes one indicator column per level seen during ``fit``, levels
    ordered by first appearance. A level that was not seen during ``fit``
    encodes as an all-zero block and is tallied in ``n_unseen_``.
    """

    def __init__(self, schema: FeatureSchema | None = None):
        self.schema = schema

    def fit(self, X: pd.DataFrame, y=None):
        schema = self._check_schema(X)
        self.categories_ = {
            name: list(pd.unique(X[name].to_numpy(dtype=object))) for name in schema.categorical
        }
        self._build_layout()
        return self

    def _check_schema(self, X) -> FeatureSchema:
        if self.schema is None:
            raise ValueError("MixedTypeEncoder requires a schema")
        if not isinstance(X, pd.DataFrame) or list(X.columns) != self.schema.names:
            got = list(X.columns) if isinstance(X, pd.DataFrame) else type(X).__name__
            raise DataValidationError(f"input columns {got} do not match schema {self.schema.names}")
        return self.schema

    def _build_layout(self) -> None:
        names = list(self.schema.numeric)
        blocks = {name: [i] for i, name in enumerate(names)}
        for col in self.schema.categorical:
            start = len(names)
            names.extend(f"{col}={level}" for level in self.categories_[col])
            blocks[col] = list(range(start, len(names)))
        self.feature_names_out_ = names
        self.blocks_ = blocks
        self.n_features_out_ = len(names)

    def transform(self, X: pd.DataFrame) -> np.ndarray:
        check_is_fitted(self, "categories_")
        schema = self._check_schema(X)
        out = np.zeros((len(X), self.n_features_out_), dtype=np.float64)
        for j, name in enumerate(schema.numeric):
            out[:, j] = X[name].to_numpy(dtype=np.float64)
        unseen = 0
        for col in schema.categorical:
            lookup = {level: self.blocks_[col][k] for k, level in enumerate(self.categories_[col])}
            for i, value in enumerate(X[col].to_numpy(dtype=object)):
                j = lookup.get(value)
                if j is None:
                    unseen += 1
                else:
                    out[i, j] = 1.0
        self.n_unseen_ = unseen
        return out

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "categories_")
        return np.asarray(self.feature_names_out_, dtype=object)

    def to_dict(self) -> dict:
        check_is_fitted(self, "categories_")
        return {"schema": self.schema.to_dict(), "categories": self.categories_}

    @classmethod
    def from_dict(cls, payload: dict) -> "MixedTypeEncoder":
        enc = cls(FeatureSchema.from_dict(payload["schema"]))
        enc.categories_ = {k: list(v) for k, v in payload["categories"].items()}
        enc._build_layout()
        return enc


def one_hot_encode(data: Dataset, encoder: MixedTypeEncoder | None = None) -> EncodedMatrix:
    """Encode ``data``; fits a new encoder unless a fitted one is supplied."""
    if encoder is None:
        encoder = MixedTypeEncoder(data.schema).fit(data.X)
    X = encoder.transform(data.X)
    return EncodedMatrix(X, list(encoder.feature_names_out_), data.y.copy(), dict(encoder.blocks_))


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "SplitIndices":
        return cls(np.asarray(payload["train"], dtype=np.intp), np.asarray(payload["test"], dtype=np.intp))


def train_test_split(data: Dataset | int, fraction: float = 0.9, seed: int = 0) -> SplitIndices:
    """Shuffle ``0..n-1`` with ``seed`` and send the first ``round(fraction * n)`` to train."""
    n = data if isinstance(data, (int, np.integer)) else len(data)
    if n < 2:
        raise ValueError(f"need at least 2 rows to split, got {n}")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"fraction={fraction} with n={n} leaves an empty {'train' if n_train == 0 else 'test'} split"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(perm[:n_train].astype(np.intp), perm[n_train:].astype(np.intp))


def kfold_indices(indices: Sequence[int], k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffle ``indices`` and cut them into ``k`` validation folds.

    Returns ``(train_fold, validation_fold)`` pairs. Fold sizes differ by at
    most one, with the larger folds first.
    """
    indices = np.asarray(indices, dtype=np.intp)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(indices):
        raise ValueError(f"k={k} exceeds the number of indices ({len(indices)})")
    shuffled = indices[np.random.default_rng(seed).permutation(len(indices))]
    folds = np.array_split(shuffled, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((train, val))
    return out


# ---------------------------------------------------------------------------
# synthetic bonds

RATING_SCALE = (
    "AAA", "AA+", "AA", "AA-", "A+", "A", "A-", "BBB+", "BBB", "BBB-",
    "BB+", "BB", "BB-", "B+", "B", "B-", "CCC+", "CCC", "CCC-", "CC", "C",
)

BOND_COLUMNS: tuple[tuple[str, Kind], ...] = (
    ("coupon", NUMERIC),
    ("coupon_frequency", NUMERIC),
    ("duration", NUMERIC),
    ("country", CATEGORICAL),
    ("days_to_maturity", NUMERIC),
    ("age", NUMERIC),
    ("industry", CATEGORICAL),
    ("amount_issued", NUMERIC),
    ("amount_outstanding", NUMERIC),
    ("rating", CATEGORICAL),
)
TARGET = "yield_to_maturity"
Y_MIN, Y_MAX = 0.32, 7.82


@dataclass
class GeneratorConfig:
    """Knobs for :func:`generate_synthetic_bonds`.

    ``relevant`` names the bond columns that drive the target; every other
    bond column, plus ``n_noise_numeric`` extra ``noise_*`` columns and
    ``n_noise_categorical`` extra ``noise_cat_*`` columns, is pure noise.
    """

    n_countries: int = 6
    n_industries: int = 10
    n_ratings: int = 12
    relevant: tuple[str, ...] = (
        "rating", "duration", "coupon", "days_to_maturity", "industry", "amount_outstanding",
    )
    n_noise_numeric: int = 2
    n_noise_categorical: int = 0
    noise_levels: int = 5
    noise_std: float = 0.25
    y_range: tuple[float, float] = (Y_MIN, Y_MAX)

    def __post_init__(self):
        self.relevant = tuple(self.relevant)
        self.y_range = tuple(float(v) for v in self.y_range)
        known = {name for name, _ in BOND_COLUMNS}
        unknown = set(self.relevant) - known
        if unknown:
            raise ValueError(f"unknown relevant feature(s): {sorted(unknown)}")
        if not self.relevant:
            raise ValueError("at least one relevant feature is required")
        if not 1 <= self.n_ratings <= len(RATING_SCALE):
            raise ValueError(f"n_ratings must be in 1..{len(RATING_SCALE)}")
        if min(self.n_countries, self.n_industries, self.noise_levels) < 1:
            raise ValueError("level counts must be positive")
        if self.n_noise_numeric < 0 or self.n_noise_categorical < 0:
            raise ValueError("noise feature counts must be non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not self.y_range[0] < self.y_range[1]:
            raise ValueError("y_range must be increasing")

    def to_dict(self) -> dict:
        return {
            "n_countries": self.n_countries,
            "n_industries": self.n_industries,
            "n_ratings": self.n_ratings,
            "relevant": list(self.relevant),
            "n_noise_numeric": self.n_noise_numeric,
            "n_noise_categorical": self.n_noise_categorical,
            "noise_levels": self.noise_levels,
            "noise_std": self.noise_std,
            "y_range": list(self.y_range),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GeneratorConfig":
        payload = dict(payload)
        payload.pop("seed", None)
        payload.pop("n", None)
        return cls(**payload)


@dataclass(frozen=True)
class SyntheticBonds:
    """Generated dataset together with its ground-truth feature ledger."""

    data: Dataset
    relevant: list[str]
    noise: list[str]
    seed: int
    config: GeneratorConfig

    def ledger(self) -> dict:
        return {
            "seed": self.seed,
            "n": len(self.data),
            "relevant": self.relevant,
            "noise": self.noise,
            "target_function": (
                "sum of standardized per-feature effects for the relevant columns "
                "(rating ordinal, logistic of duration, coupon x rating interaction, "
                "sqrt days to maturity, per-level industry/country offsets, log amounts), "
                "plus Gaussian noise, affinely rescaled onto y_range"
            ),
            "config": self.config.to_dict(),
        }


def _standardize(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def generate_synthetic_bonds(n: int, seed: int = 0, config: GeneratorConfig | None = None) -> SyntheticBonds:
    """Draw ``n`` bond-like rows with a known relevant/noise feature split.

    Features are sampled independently of one another so that noise columns
    carry no information about the target, directly or through correlation.
    The target is rescaled so its empirical minimum and maximum equal
    ``config.y_range``.
    """
    config = config or GeneratorConfig()
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)

    countries = [f"C{i:02d}" for i in range(config.n_countries)]
    industries = [f"IND{i:02d}" for i in range(config.n_industries)]
    ratings = list(RATING_SCALE[: config.n_ratings])

    cols: dict[str, np.ndarray] = {
        "coupon": np.round(rng.uniform(0.5, 8.0, n), 3),
        "coupon_frequency": rng.choice([1.0, 2.0, 4.0, 12.0], size=n, p=[0.2, 0.6, 0.15, 0.05]),
        "duration": np.round(rng.uniform(0.25, 20.0, n), 4),
        "country": np.asarray(countries, dtype=object)[rng.integers(0, config.n_countries, n)],
        "days_to_maturity": rng.integers(30, 30 * 365, n).astype(np.float64),
        "age": rng.integers(0, 20 * 365, n).astype(np.float64),
        "industry": np.asarray(industries, dtype=object)[rng.integers(0, config.n_industries, n)],
        "amount_issued": np.round(np.exp(rng.uniform(np.log(1e7), np.log(5e9), n)), -3),
        "amount_outstanding": np.round(np.exp(rng.uniform(np.log(1e7), np.log(5e9), n)), -3),
    }
    rating_idx = rng.integers(0, config.n_ratings, n)
    cols["rating"] = np.asarray(ratings, dtype=object)[rating_idx]
    industry_effect = rng.normal(0.0, 1.0, config.n_industries)
    country_effect = rng.normal(0.0, 1.0, config.n_countries)

    noise_names: list[str] = []
    for i in range(config.n_noise_numeric):
        name = f"noise_{i}"
        cols[name] = np.round(rng.normal(0.0, 1.0, n), 6)
        noise_names.append(name)
    noise_levels = [f"L{i}" for i in range(config.noise_levels)]
    for i in range(config.n_noise_categorical):
        name = f"noise_cat_{i}"
        cols[name] = np.asarray(noise_levels, dtype=object)[rng.integers(0, config.noise_levels, n)]
        noise_names.append(name)

    rating01 = rating_idx / max(config.n_ratings - 1, 1)
    effects = {
        "rating": rating01,
        "duration": 1.0 / (1.0 + np.exp(-(cols["duration"] - 8.0) / 2.5)),
        "coupon": cols["coupon"],
        "days_to_maturity": np.sqrt(cols["days_to_maturity"]),
        "industry": industry_effect[[industries.index(v) for v in cols["industry"]]],
        "country": country_effect[[countries.index(v) for v in cols["country"]]],
        "age": cols["age"],
        "amount_issued": np.log(cols["amount_issued"]),
        "amount_outstanding": np.log(cols["amount_outstanding"]),
        "coupon_frequency": np.log(cols["coupon_frequency"]),
    }
    signal = np.zeros(n)
    for name in config.relevant:
        signal += _standardize(effects[name])
    if "coupon" in config.relevant and "rating" in config.relevant:
        signal += 0.5 * _standardize(_standardize(effects["coupon"]) * _standardize(rating01))
    signal += config.noise_std * rng.normal(0.0, 1.0, n)

    lo, hi = config.y_range
    span = signal.max() - signal.min()
    if span > 0:
        y = lo + (signal - signal.min()) * (hi - lo) / span
    else:
        y = np.full(n, 0.5 * (lo + hi))

    columns = list(BOND_COLUMNS) + [
        (name, CATEGORICAL if name.startswith("noise_cat_") else NUMERIC) for name in noise_names
    ]
    schema = FeatureSchema(columns=tuple(columns), target=TARGET)
    frame = pd.DataFrame({name: cols[name] for name, _ in columns})
    relevant = [name for name, _ in columns if name in config.relevant]
    noise = [name for name, _ in columns if name not in config.relevant]
    return SyntheticBonds(Dataset(schema, frame, y), relevant, noise, int(seed), config)


def level_count(data: Dataset) -> int:
    """Encoded width ``p`` the training vocabulary of ``data`` would produce."""
    return len(data.schema.numeric) + sum(data.X[c].nunique() for c in data.schema.categorical)
