import math

import numpy as np
import pytest

from forestsim.dataset import generate_synthetic_bonds, one_hot_encode
from forestsim.forest import (ForestRegressor, fit_forest, load_model, permutation_importance,
                              save_model, tree_rng)
from forestsim.tree import TreeStructure


def _leaf(value, n):
    return TreeStructure(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                         np.array([float(value)]), np.array([float(n)]), np.array([0]))


def _stub_forest(values, n=4, p=2):
    forest = ForestRegressor(n_estimators=len(values))
    forest.estimators_ = [_leaf(v, n) for v in values]
    forest.in_bag_ = np.ones((len(values), n), dtype=np.int32)
    forest.n_train_, forest.n_features_in_ = n, p
    return forest


@pytest.fixture(scope="module")
def regression_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 5))
    y = 2 * X[:, 0] - X[:, 1] + 0.1 * rng.normal(size=300)
    return X, y


def test_single_tree_without_bootstrap(regression_data):
    X, y = regression_data
    forest = ForestRegressor(n_estimators=1, bootstrap=False, max_depth=3).fit(X, y)
    assert forest.in_bag_.tolist() == [[1] * len(y)]
    assert forest.oob_indices(0).size == 0
    np.testing.assert_array_equal(forest.in_bag_indices(0), np.arange(len(y)))


def test_oob_fraction_matches_bootstrap_expectation():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(1000, 2))
    forest = ForestRegressor(n_estimators=100, max_depth=1, random_state=3).fit(X, rng.normal(size=1000))
    frac = forest.oob_mask_.mean()
    assert abs(frac - math.exp(-1)) <= 0.03
    assert np.all(forest.in_bag_.sum(axis=1) == 1000)


def test_same_seed_same_forest(regression_data):
    X, y = regression_data
    a = ForestRegressor(n_estimators=12, max_depth=5, max_features="sqrt", random_state=9, n_jobs=1).fit(X, y)
    b = ForestRegressor(n_estimators=12, max_depth=5, max_features="sqrt", random_state=9, n_jobs=4).fit(X, y)
    assert all(s == t for s, t in zip(a.estimators_, b.estimators_))
    np.testing.assert_array_equal(a.in_bag_, b.in_bag_)
    c = ForestRegressor(n_estimators=12, max_depth=5, max_features="sqrt", random_state=10).fit(X, y)
    assert not np.array_equal(a.in_bag_, c.in_bag_)


def test_trees_do_not_depend_on_forest_size(regression_data):
    X, y = regression_data
    small = ForestRegressor(n_estimators=5, max_depth=4, random_state=2).fit(X, y)
    large = ForestRegressor(n_estimators=9, max_depth=4, random_state=2).fit(X, y)
    assert all(s == t for s, t in zip(small.estimators_, large.estimators_[:5]))


def test_stub_forest_predictions():
    X = np.zeros((3, 2))
    assert _stub_forest([1.5, 1.5]).predict(X).tolist() == [1.5] * 3
    assert _stub_forest([1.0, 3.0]).predict(X).tolist() == [2.0] * 3
    assert _stub_forest([1.0]).apply(X).tolist() == [[0]] * 3


def test_predict_is_mean_of_trees(regression_data):
    X, y = regression_data
    forest = ForestRegressor(n_estimators=15, max_depth=6, random_state=0).fit(X, y)
    Q = np.random.default_rng(5).normal(size=(100, 5))
    per_tree = np.array([tree.predict(Q) for tree in forest.estimators_])
    np.testing.assert_allclose(forest.predict(Q), per_tree.mean(axis=0), rtol=0, atol=1e-12)


def test_apply_consistent_with_predict(regression_data):
    X, y = regression_data
    forest = ForestRegressor(n_estimators=15, max_depth=6, random_state=0).fit(X, y)
    leaves = forest.apply(X)
    assert leaves.shape == (len(X), 15)
    rebuilt = np.zeros(len(X))
    for t, tree in enumerate(forest.estimators_):
        rebuilt += tree.value[tree.feature == -1][leaves[:, t]]
    np.testing.assert_allclose(rebuilt / 15, forest.predict(X), rtol=0, atol=1e-12)
    dup = forest.apply(np.vstack([X[3], X[3]]))
    assert np.array_equal(dup[0], dup[1])


def test_oob_predict(regression_data):
    X, y = regression_data
    forest = ForestRegressor(n_estimators=30, max_depth=6, random_state=0).fit(X, y)
    pred = forest.oob_predict(X)
    i = 0
    trees = np.flatnonzero(forest.oob_mask_[:, i])
    expected = np.mean([forest.estimators_[t].predict(X[[i]])[0] for t in trees])
    assert np.isclose(pred[i], expected, atol=1e-12)
    assert forest.oob_score_rmse(X, y) > 0


def test_feature_count_mismatch(regression_data):
    X, y = regression_data
    forest = ForestRegressor(n_estimators=2, max_depth=2).fit(X, y)
    with pytest.raises(ValueError, match="columns"):
        forest.predict(X[:, :3])


def test_constant_and_unused_columns_score_zero():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 4))
    X[:, 2] = 7.0
    y = X[:, 0] + 0.05 * rng.normal(size=200)
    forest = ForestRegressor(n_estimators=20, max_depth=4, random_state=1).fit(X, y)
    used = set(np.concatenate([t.used_features() for t in forest.estimators_]).tolist())
    imp = permutation_importance(forest, X, y, n_repeats=3, seed=0)
    assert np.all(imp.importances[2] == 0.0)
    for j in set(range(4)) - used:
        assert np.all(imp.importances[j] == 0.0)
    assert imp.ranking()[0][0] == "x0"


@pytest.mark.parametrize("seed", range(3))
def test_single_driver_outranks_noise(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(300, 4))
    y = 3 * X[:, 1] + 0.1 * rng.normal(size=300)
    forest = ForestRegressor(n_estimators=25, max_depth=6, random_state=seed).fit(X, y)
    imp = permutation_importance(forest, X, y, n_repeats=3, seed=seed)
    assert imp.mean[1] > 0
    assert imp.mean[1] > np.delete(imp.mean, 1).max()


def test_grouped_importance_uses_encoder_blocks():
    bonds = generate_synthetic_bonds(300, seed=4)
    enc = one_hot_encode(bonds.data)
    forest = ForestRegressor(n_estimators=20, max_depth=6, random_state=0).fit(enc.X, enc.y)
    imp = permutation_importance(forest, enc.X, enc.y, n_repeats=2, groups=enc.blocks)
    assert sorted(imp.names) == sorted(bonds.data.schema.names)
    again = permutation_importance(forest, enc.X, enc.y, n_repeats=2, groups=enc.blocks)
    np.testing.assert_array_equal(imp.importances, again.importances)


@pytest.mark.parametrize("name", ["model.json", "model.json.gz"])
def test_model_round_trip(tmp_path, regression_data, name):
    X, y = regression_data
    forest = fit_forest(X, y, n_trees=6, seed=3)
    path = tmp_path / name
    save_model(path, forest, [f"f{j}" for j in range(5)], extra={"note": 1})
    loaded = load_model(path)
    assert loaded.feature_names == [f"f{j}" for j in range(5)]
    assert loaded.extra == {"note": 1}
    np.testing.assert_array_equal(loaded.forest.predict(X), forest.predict(X))
    np.testing.assert_array_equal(loaded.forest.in_bag_, forest.in_bag_)
    first = path.read_bytes()
    save_model(path, forest, [f"f{j}" for j in range(5)], extra={"note": 1})
    assert path.read_bytes() == first


def test_load_missing_model(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "absent.json")


def test_tree_rng_streams_are_distinct():
    a = tree_rng(0, 0).integers(0, 2**31, 4)
    b = tree_rng(0, 1).integers(0, 2**31, 4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, tree_rng(0, 0).integers(0, 2**31, 4))


def test_get_params_round_trip():
    forest = ForestRegressor(n_estimators=7, max_depth=3)
    clone = ForestRegressor(**forest.get_params())
    assert clone.get_params() == forest.get_params()
