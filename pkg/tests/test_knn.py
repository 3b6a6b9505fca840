import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forestsim.knn import UNIFORM, KnnConfig, PrecomputedKNNRegressor, knn_predict, knn_sweep, neighbour_order


def test_k1_returns_nearest_target():
    D = np.array([[2.0, 0.5, 3.0]])
    assert knn_predict(D, [10.0, 20.0, 30.0], 1)[0] == 20.0


def test_inverse_distance_hand_case():
    pred = knn_predict(np.array([[1.0, 3.0]]), [0.0, 4.0], 2)
    assert abs(pred[0] - 1.0) <= 1e-12


def test_zero_distance_neighbour_wins():
    D = np.array([[0.0, 0.1, 0.2, 5.0]])
    y = [7.0, 100.0, -100.0, 3.0]
    for k in (1, 2, 3, 4):
        assert knn_predict(D, y, k)[0] == 7.0


def test_several_zero_distance_neighbours_are_averaged():
    D = np.array([[0.0, 1.0, 0.0]])
    assert knn_predict(D, [2.0, 50.0, 4.0], 3)[0] == 3.0


def test_ties_go_to_lower_index():
    D = np.array([[1.0, 1.0, 1.0]])
    np.testing.assert_array_equal(neighbour_order(D), [[0, 1, 2]])
    assert knn_predict(D, [1.0, 2.0, 3.0], KnnConfig(1))[0] == 1.0


def test_uniform_with_all_neighbours_is_mean():
    rng = np.random.default_rng(0)
    D = rng.random((4, 9))
    y = rng.normal(size=9)
    pred = knn_predict(D, y, KnnConfig(9, UNIFORM))
    np.testing.assert_allclose(pred, y.mean(), atol=1e-12)


def test_self_exclusion_drops_diagonal():
    D = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 4.0], [2.0, 4.0, 0.0]])
    y = [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(knn_predict(D, y, KnnConfig(1)), y)
    np.testing.assert_array_equal(knn_predict(D, y, KnnConfig(1, self_exclusion=True)), [2.0, 1.0, 1.0])
    with pytest.raises(ValueError, match="exceeds"):
        knn_sweep(D, y, [3], self_exclusion=True)


def test_sweep_equals_individual_predictions():
    rng = np.random.default_rng(1)
    D = rng.random((6, 20))
    y = rng.normal(size=20)
    sweep = knn_sweep(D, y, [1, 4, 9])
    for k in (1, 4, 9):
        order = np.argsort(D, axis=1, kind="stable")[:, :k]
        d = np.take_along_axis(D, order, axis=1)
        w = 1.0 / d
        np.testing.assert_allclose(sweep[k], (w * y[order]).sum(1) / w.sum(1), rtol=1e-12)


@pytest.mark.parametrize("bad", [np.array([[np.nan, 1.0]]), np.array([[-1.0, 1.0]]), np.zeros((1, 3))])
def test_rejects_invalid_matrices(bad):
    with pytest.raises(ValueError):
        knn_predict(bad, [1.0, 2.0], 1)


def test_config_validation():
    with pytest.raises(ValueError):
        KnnConfig(0)
    with pytest.raises(ValueError):
        KnnConfig(1, "cosine")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 15), st.floats(0.01, 100.0))
def test_distance_scale_invariance(seed, n, c):
    rng = np.random.default_rng(seed)
    D = rng.random((3, n)) + 0.01
    y = rng.normal(size=n)
    k = int(rng.integers(1, n + 1))
    a = knn_predict(D, y, k)
    b = knn_predict(D * c, y, k)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)
    assert np.all(a >= y.min() - 1e-12) and np.all(a <= y.max() + 1e-12)


def test_estimator_wrapper():
    D = np.array([[1.0, 3.0]])
    est = PrecomputedKNNRegressor(n_neighbors=2).fit(np.zeros((2, 2)), [0.0, 4.0])
    assert abs(est.predict(D)[0] - 1.0) <= 1e-12
    assert est.get_params() == {"n_neighbors": 2, "weights": "distance", "exclude_self": False}
    with pytest.raises(ValueError):
        PrecomputedKNNRegressor().fit(np.zeros((2, 3)), [0.0, 1.0])
