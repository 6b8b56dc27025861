import numpy as np
import pytest

from fbsde import models
from fbsde.sde import TimeGrid, simulate_ensemble


@pytest.fixture(scope="session")
def bm_ensemble():
    model = models.brownian(2)
    grid = TimeGrid(0.0, 1.0, 20)
    return model, simulate_ensemble(model, grid, np.zeros(2), 20_000, 1)


@pytest.fixture(scope="session")
def ou_ensemble():
    model = models.ornstein_uhlenbeck(1.0, 2)
    grid = TimeGrid(0.0, 1.0, 50)
    return model, simulate_ensemble(model, grid, np.array([0.3, -0.2]), 20_000, 2)


def within(est, truth, k=3.0):
    return abs(est.value - truth) <= k * est.std_error


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
