"""End-to-end similarity comparison: split, encode, fit, build the four metrics, sweep K."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset, GeneratorConfig, MixedTypeEncoder, SplitIndices, generate_synthetic_bonds, train_test_split
from .distances import GowerRanges, ZScoreStats, euclidean_matrix, gower_matrix
from .evaluation import DEFAULT_K_VALUES, Baseline, EvalReport, k_sweep
from .forest import ForestRegressor
from .proximity import ORIGINAL, OOB, ProximityMatrix, external_proximity, oob_proximity, proximity, to_distance

D_EUCLIDEAN = "d_euclidean"
D_EUCLIDEAN_RAW = "d_euclidean_raw"
D_GOWER = "d_gower"
D_PROX = "d_prox"
D_PROX_OOB = "d_prox_oob"
ALL_METRICS = (D_EUCLIDEAN, D_GOWER, D_PROX, D_PROX_OOB)
METRIC_ORDER = (D_EUCLIDEAN, D_EUCLIDEAN_RAW, D_GOWER, D_PROX, D_PROX_OOB)


@dataclass
class PreparedSplit:
    data: Dataset
    split: SplitIndices
    encoder: MixedTypeEncoder
    train: Dataset
    test: Dataset
    X_train: np.ndarray
    X_test: np.ndarray

    @classmethod
    def build(cls, data: Dataset, split: SplitIndices) -> "PreparedSplit":
        train, test = data.subset(split.train), data.subset(split.test)
        encoder = MixedTypeEncoder(data.schema).fit(train.X)
        return cls(data, split, encoder, train, test, encoder.transform(train.X), encoder.transform(test.X))

    @property
    def numeric_columns(self) -> list[int]:
        return list(range(len(self.data.schema.numeric)))


@dataclass
class ProximitySet:
    train: ProximityMatrix
    test: ProximityMatrix


def proximity_matrices(forest: ForestRegressor, X_train, X_test, modes=(ORIGINAL, OOB),
                       n_jobs=None) -> dict[str, ProximitySet]:
    train_leaves = forest.apply(X_train)
    test_leaves = forest.apply(X_test)
    out = {}
    if ORIGINAL in modes:
        out[ORIGINAL] = ProximitySet(proximity(train_leaves, n_jobs),
                                     external_proximity(forest, train_leaves, test_leaves, ORIGINAL, n_jobs))
    if OOB in modes:
        out[OOB] = ProximitySet(oob_proximity(train_leaves, forest, n_jobs),
                                external_proximity(forest, train_leaves, test_leaves, OOB, n_jobs))
    return out


def baseline_distances(prep: PreparedSplit, metrics: Sequence[str], scale_euclidean: bool = True
                       ) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Train/test matrices for the classical metrics named in ``metrics``.

    ``d_euclidean`` z-scores the numeric columns with training statistics
    unless ``scale_euclidean`` is off; ``d_euclidean_raw`` never scales.
    """
    out = {}
    for name, scaled in ((D_EUCLIDEAN, scale_euclidean), (D_EUCLIDEAN_RAW, False)):
        if name not in metrics:
            continue
        stats = ZScoreStats.fit(prep.X_train, prep.numeric_columns) if scaled else None
        out[name] = (euclidean_matrix(prep.X_train, prep.X_train, stats).values,
                     euclidean_matrix(prep.X_test, prep.X_train, stats).values)
        np.fill_diagonal(out[name][0], 0.0)
    if D_GOWER in metrics:
        ranges = GowerRanges.fit(prep.train.X, prep.data.schema)
        out[D_GOWER] = (gower_matrix(prep.train.X, prep.train.X, prep.data.schema, ranges).values,
                        gower_matrix(prep.test.X, prep.train.X, prep.data.schema, ranges).values)
    return out


@dataclass
class ComparisonResult:
    reports: dict[str, EvalReport]
    baseline: Baseline
    undefined_oob_pairs: int = 0
    extra: dict = field(default_factory=dict)

    def best_test_rmse(self) -> dict[str, float]:
        return {name: rep.at_best("test_rmse") for name, rep in self.reports.items()}


def compare_metrics(prep: PreparedSplit, forest: ForestRegressor, k_values=DEFAULT_K_VALUES,
                    metrics: Sequence[str] = ALL_METRICS, scale_euclidean: bool = True,
                    self_exclusion: bool = True, n_jobs=None) -> ComparisonResult:
    """KNN K-sweep for each requested metric plus the forest's own errors."""
    y_tr, y_te = prep.train.y, prep.test.y
    baseline = Baseline.from_predictions(y_tr, forest.predict(prep.X_train), y_te, forest.predict(prep.X_test))
    sets = baseline_distances(prep, metrics, scale_euclidean)
    modes = [m for m, name in ((ORIGINAL, D_PROX), (OOB, D_PROX_OOB)) if name in metrics]
    undefined = 0
    if modes:
        prox = proximity_matrices(forest, prep.X_train, prep.X_test, modes, n_jobs)
        if ORIGINAL in prox:
            sets[D_PROX] = (to_distance(prox[ORIGINAL].train).values, to_distance(prox[ORIGINAL].test).values)
        if OOB in prox:
            undefined = prox[OOB].train.n_undefined_pairs()
            sets[D_PROX_OOB] = (to_distance(prox[OOB].train).values, to_distance(prox[OOB].test).values)
    ordered = {name: sets[name] for name in METRIC_ORDER if name in sets}
    reports = k_sweep(ordered, y_tr, y_te, k_values, baseline, self_exclusion=self_exclusion)
    return ComparisonResult(reports, baseline, undefined)


def run_synthetic_benchmark(seed: int, n: int = 2000, config: GeneratorConfig | None = None,
                            max_depth: int | None = 10, n_trees: int = 500, fraction: float = 0.9,
                            k_values=DEFAULT_K_VALUES, n_jobs=None) -> ComparisonResult:
    """Generate bonds, fit a forest at a fixed operating point and compare metrics."""
    bonds = generate_synthetic_bonds(n, seed, config)
    prep = PreparedSplit.build(bonds.data, train_test_split(bonds.data, fraction, seed))
    forest = ForestRegressor(n_estimators=n_trees, max_depth=max_depth, random_state=seed,
                             n_jobs=n_jobs).fit(prep.X_train, prep.train.y)
    return compare_metrics(prep, forest, k_values, n_jobs=n_jobs)
