import numpy as np
import pytest

from forestsim.dataset import GeneratorConfig, generate_synthetic_bonds, one_hot_encode
from forestsim.forest import ForestRegressor

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_bonds():
    return generate_synthetic_bonds(240, seed=11)


@pytest.fixture(scope="session")
def small_encoded(small_bonds):
    return one_hot_encode(small_bonds.data)


@pytest.fixture(scope="session")
def small_forest(small_encoded):
    return ForestRegressor(n_estimators=25, max_depth=6, random_state=5, n_jobs=1).fit(
        small_encoded.X, small_encoded.y
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
