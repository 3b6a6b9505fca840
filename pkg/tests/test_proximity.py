import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forestsim.forest import ForestRegressor
from forestsim.knn import PrecomputedKNNRegressor
from forestsim.proximity import (OOB, ORIGINAL, ProximityDistance, external_proximity,
                                 external_proximity_bruteforce, oob_proximity, oob_proximity_bruteforce,
                                 proximity, proximity_bruteforce, to_distance)


def random_leaves(rng, n, T, max_leaves=6):
    return rng.integers(0, max_leaves, size=(n, T))


def random_oob(rng, n, T, rate=0.37):
    return rng.random((T, n)) < rate


@pytest.fixture(scope="module")
def fitted():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 4))
    y = X[:, 0] + 0.3 * rng.normal(size=60)
    forest = ForestRegressor(n_estimators=25, max_depth=4, random_state=1).fit(X, y)
    return forest, X, rng.normal(size=(10, 4))


def test_single_leaf_tree_gives_all_ones():
    P = proximity(np.zeros((5, 1), dtype=int))
    np.testing.assert_array_equal(P.values, np.ones((5, 5)))


def test_distinct_leaves_give_identity():
    L = np.tile(np.arange(6)[:, None], (1, 4))
    np.testing.assert_array_equal(proximity(L).values, np.eye(6))
    np.testing.assert_array_equal(proximity_bruteforce(L).values, np.eye(6))


def test_fitted_forest_diagonal_and_oracle(fitted):
    forest, X, _ = fitted
    L = forest.apply(X[:50])
    fast = proximity(L)
    np.testing.assert_array_equal(np.diag(fast.values), np.ones(50))
    np.testing.assert_array_equal(fast.counts, proximity_bruteforce(L).counts)
    np.testing.assert_array_equal(fast.values, fast.values.T)


def test_oob_two_tree_hand_case():
    # rows 0 and 1 are jointly OOB only in tree 0, where they share a leaf
    L = np.array([[0, 0], [0, 1], [1, 1]])
    oob = np.array([[True, True, False], [True, False, True]])
    P = oob_proximity(L, oob)
    assert P.values[0, 1] == 1.0 and P.denominators[0, 1] == 1
    # rows 1 and 2 are never jointly OOB
    assert np.isnan(P.values[1, 2])
    assert to_distance(P).values[1, 2] == 1.0
    assert P.n_undefined_pairs() == 1
    np.testing.assert_array_equal(P.counts, oob_proximity_bruteforce(L, oob).counts)


def test_oob_accepts_forest(fitted):
    forest, X, _ = fitted
    L = forest.apply(X)
    a = oob_proximity(L, forest)
    b = oob_proximity_bruteforce(L, forest.oob_mask_)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.denominators, b.denominators)
    with pytest.raises(ValueError, match="training rows"):
        oob_proximity(L[:10], forest)


def test_external_identical_row_is_one(fitted):
    forest, X, _ = fitted
    train = forest.apply(X)
    ext = forest.apply(X[[4]])
    assert external_proximity(forest, train, ext, ORIGINAL).values[0, 4] == 1.0


def test_external_in_bag_single_tree_is_undefined():
    forest = ForestRegressor(n_estimators=1, bootstrap=False, max_depth=2)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(8, 2))
    forest.fit(X, rng.normal(size=8))
    P = external_proximity(forest, forest.apply(X), forest.apply(X[:2]), OOB)
    assert np.isnan(P.values).all()
    np.testing.assert_array_equal(to_distance(P).values, np.ones((2, 8)))


@pytest.mark.parametrize("mode", [ORIGINAL, OOB])
def test_external_matches_oracle(mode):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 3))
    forest = ForestRegressor(n_estimators=25, max_depth=5, random_state=2).fit(X, X[:, 0])
    train, ext = forest.apply(X), forest.apply(rng.normal(size=(10, 3)))
    fast = external_proximity(forest, train, ext, mode)
    slow = external_proximity_bruteforce(forest, train, ext, mode)
    assert fast.shape == (10, 60)
    np.testing.assert_array_equal(fast.values, slow.values)


def test_external_rejects_bad_mode(fitted):
    forest, X, Q = fitted
    with pytest.raises(ValueError, match="mode"):
        external_proximity(forest, forest.apply(X), forest.apply(Q), "both")


def test_to_distance_endpoints():
    P = proximity(np.array([[0, 0], [0, 1], [1, 2]]))
    D = to_distance(P).values
    assert D[0, 1] == 0.5 and D[0, 2] == 1.0 and D[1, 2] == 1.0
    np.testing.assert_array_equal(np.diag(D), 0.0)
    np.testing.assert_array_equal(D, D.T)
    one = proximity(np.zeros((2, 3), dtype=int))
    np.testing.assert_array_equal(to_distance(one).values, np.zeros((2, 2)))
    assert to_distance(P).metric_name == "d_prox"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(1, 20), st.integers(1, 5))
def test_matrix_invariants(seed, n, T, n_leaves):
    rng = np.random.default_rng(seed)
    L = random_leaves(rng, n, T, n_leaves)
    oob = random_oob(rng, n, T)
    P = proximity(L)
    Q = oob_proximity(L, oob)
    np.testing.assert_array_equal(P.counts, proximity_bruteforce(L).counts)
    np.testing.assert_array_equal(P.values, P.values.T)
    np.testing.assert_array_equal(np.diag(P.values), 1.0)
    assert P.values.min() >= 0 and P.values.max() <= 1
    slow = oob_proximity_bruteforce(L, oob)
    np.testing.assert_array_equal(Q.counts, slow.counts)
    np.testing.assert_array_equal(Q.denominators, slow.denominators)
    assert np.all(Q.counts <= Q.denominators)
    defined = Q.values[~np.isnan(Q.values)]
    assert defined.min() >= 0 and defined.max() <= 1
    np.testing.assert_array_equal(np.isnan(Q.values), np.isnan(Q.values.T))
    np.testing.assert_array_equal(np.nan_to_num(Q.values, nan=-1), np.nan_to_num(Q.values.T, nan=-1))
    D = to_distance(Q).values
    assert np.isfinite(D).all() and D.min() >= 0 and D.max() <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 25), st.integers(1, 10))
def test_refining_leaves_never_raises_proximity(seed, n, T):
    # splitting every leaf further can only separate pairs
    rng = np.random.default_rng(seed)
    coarse = random_leaves(rng, n, T, 3)
    fine = coarse * 2 + rng.integers(0, 2, size=coarse.shape)
    assert np.all(proximity(fine).counts <= proximity(coarse).counts)


def test_transformer_pipeline(fitted):
    forest, X, Q = fitted
    y = X[:, 0]
    for oob in (False, True):
        tr = ProximityDistance(oob=oob, n_estimators=20, max_depth=4, random_state=0)
        D_train = tr.fit_transform(X, y)
        D_test = tr.transform(Q)
        assert D_train.shape == (60, 60) and D_test.shape == (10, 60)
        assert np.all(np.diag(D_train) == 0)
        knn = PrecomputedKNNRegressor(n_neighbors=5).fit(D_train, y)
        assert knn.predict(D_test).shape == (10,)
        loo = PrecomputedKNNRegressor(n_neighbors=5, exclude_self=True).fit(D_train, y)
        assert np.isfinite(loo.predict(D_train)).all()
    assert tr.get_params()["oob"] is True
