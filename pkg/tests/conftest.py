import numpy as np
import pytest

from genforest.data import Dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow reproduction checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction check")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_data(rng, n=200, p=3, kind="regression"):
    X = rng.uniform(-1, 1, size=(n, p))
    W = rng.binomial(1, 0.5, n).astype(float)
    Z = rng.binomial(1, 0.5, n).astype(float)
    if kind == "instrumental":
        W = Z * rng.binomial(1, 0.7, n)
    Y = X[:, 0] + (W - 0.5) * (1 + (X[:, 1] > 0)) + rng.normal(size=n)
    roles = {
        "regression": {},
        "quantile": {},
        "partial_effect": {"treatment": W},
        "instrumental": {"treatment": W, "instrument": Z},
    }[kind]
    return Dataset(X, Y, **roles)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
