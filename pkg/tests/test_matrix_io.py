import numpy as np
import pytest

from forestsim import matrix_io
from forestsim.forest import ForestRegressor
from forestsim.proximity import OOB, ORIGINAL, external_proximity, oob_proximity, proximity


@pytest.fixture(scope="module")
def forest_and_leaves():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(70, 3))
    forest = ForestRegressor(n_estimators=15, max_depth=4, random_state=0).fit(X, X[:, 0])
    return forest, forest.apply(X), forest.apply(rng.normal(size=(9, 3)))


def test_binary_round_trip_is_exact(tmp_path):
    values = np.random.default_rng(1).random((37, 11))
    values[3, 4] = np.nan
    matrix_io.save_matrix(tmp_path / "m", values, kind=ORIGINAL, tile_rows=8)
    loaded, header = matrix_io.load_matrix(tmp_path / "m.json")
    assert header["n_tiles"] == 5 and header["m"] == 37 and header["n"] == 11
    np.testing.assert_array_equal(loaded, values)
    assert loaded.tobytes() == values.tobytes()


def test_csv_round_trip_is_exact(tmp_path):
    values = np.random.default_rng(2).random((5, 4)) * 1e-3
    matrix_io.save_matrix_csv(tmp_path / "m.csv", values)
    np.testing.assert_array_equal(matrix_io.load_matrix_csv(tmp_path / "m.csv"), values)


def test_writer_checks_row_count(tmp_path):
    w = matrix_io.TileWriter(tmp_path / "bad", 4, 2, ORIGINAL)
    w.write(np.zeros((3, 2)))
    with pytest.raises(ValueError, match="declared"):
        w.close()
    with matrix_io.TileWriter(tmp_path / "ok", 2, 2, ORIGINAL) as w:
        with pytest.raises(ValueError, match="columns"):
            w.write(np.zeros((2, 3)))
        w.write(np.zeros((2, 2)))


def test_load_rejects_truncated_data(tmp_path):
    matrix_io.save_matrix(tmp_path / "m", np.ones((4, 4)), kind=ORIGINAL)
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "m.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="holds"):
        matrix_io.load_matrix(tmp_path / "m")
    with pytest.raises(FileNotFoundError):
        matrix_io.load_matrix(tmp_path / "absent")


@pytest.mark.parametrize("tile_rows", [1, 16, 1024])
def test_stream_matches_in_memory(tmp_path, forest_and_leaves, tile_rows):
    forest, train, test = forest_and_leaves
    expected = {
        ("sq", ORIGINAL): proximity(train).values,
        ("sq", OOB): oob_proximity(train, forest).values,
        ("ext", ORIGINAL): external_proximity(forest, train, test, ORIGINAL).values,
        ("ext", OOB): external_proximity(forest, train, test, OOB).values,
    }
    for (shape, mode), values in expected.items():
        path = tmp_path / f"{shape}_{mode}"
        rows, cols = (train, None) if shape == "sq" else (test, train)
        header = matrix_io.stream_proximity(path, forest, rows, cols, mode, tile_rows)
        loaded, _ = matrix_io.load_matrix(path)
        assert loaded.tobytes() == values.tobytes()
        if mode == OOB:
            assert header["undefined_entries"] == int(np.isnan(values).sum())
        if shape == "sq" and mode == ORIGINAL:
            np.testing.assert_array_equal(np.diag(loaded), 1.0)
