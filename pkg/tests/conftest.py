import math

import pytest

from dmtlab import create_app
from dmtlab.data import gen_moons_pair, gen_shapes_pair
from dmtlab.schedule import linear_schedule

TEST_CONFIG = {
    "TESTING": True,
    "DMT_THREADS": 1,
    "DMT_LOG_LEVEL": "INFO",
    "DMT_CURVE_SAMPLES": 32,
    "DMT_SAMPLER": "ddim:5",
    "DMT_SIGMA_MODE": "posterior",
}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training or sweep tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def app():
    """Create the Flask app once per test session."""
    return create_app(test_config=TEST_CONFIG)


@pytest.fixture()
def runner(app):
    """A click runner bound to the app's CLI."""
    return app.test_cli_runner()


@pytest.fixture()
def sched():
    """A short linear schedule."""
    return linear_schedule(T=20, beta_start=1e-3, beta_end=0.2)


@pytest.fixture()
def moons():
    """64 moons pairs rotated by a quarter turn."""
    return gen_moons_pair(64, rotation=math.pi / 2, seed=0)


@pytest.fixture()
def shapes():
    """16 outline/filled shape pairs of 8x8 pixels."""
    return gen_shapes_pair(16, size=8, seed=0)
