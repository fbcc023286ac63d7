import warnings

import numpy as np
import pytest

from surrender_lab.portfolio import generate_initial_portfolio
from surrender_lab.rng import CounterRNG
from surrender_lab.surrender import load_profile, simulate_events, split_in_time


@pytest.fixture(scope="session")
def small_dataset():
    """A few thousand policy-years from profile 1, shared across tests."""
    rng = CounterRNG(7)
    profile = load_profile("profile_1")
    portfolio = generate_initial_portfolio(800, rng.child("portfolio"))
    return simulate_events(portfolio, profile, 6, rng=rng.child("events"))


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return split_in_time(small_dataset, 0.7)


@pytest.fixture
def toy_binary():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 3))
    p = 1.0 / (1.0 + np.exp(-(X[:, 0] - 0.5 * X[:, 1] - 1.0)))
    y = (rng.random(300) < p).astype(int)
    return X, y


@pytest.fixture(autouse=True)
def _quiet_convergence():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=UserWarning)
        yield


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
