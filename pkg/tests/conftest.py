import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from geobart.data_model import SpatialDataset

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dataset(rng, n=8, p=2, max_obs=4, binary=False) -> SpatialDataset:
    loc = rng.uniform(size=(n, 2))
    X = rng.integers(0, 2, size=(n, p)).astype(float) if binary else rng.uniform(size=(n, p))
    responses = [rng.normal(size=rng.integers(1, max_obs + 1)) for _ in range(n)]
    return SpatialDataset(loc, X, responses)


@pytest.fixture
def small_dataset(rng):
    return random_dataset(rng)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES):
            terminalreporter.write_line(line)
