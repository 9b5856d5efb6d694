from pathlib import Path

import numpy as np
import pytest

from amod.scenario import make_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def small_scenario(n=3, horizon=10, fleet=9, rate=0.8, tau=None, price=5.0, cost=1.0, seed=0, **kw):
    """Complete graph with uniform rates; ``tau`` defaults to 1 everywhere."""
    tt = np.ones((n, n), dtype=np.int64) if tau is None else np.asarray(tau)
    return make_scenario(tt, rate, price, cost, fleet, horizon, seed=seed, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_action(state, mask, rng):
    """Feasible (x, y): random partial service of waiting demand, then random moves of leftovers."""
    from amod.macro_env import FlowAction

    n = state.n_stations
    x = np.zeros((n, n), dtype=np.int64)
    y = np.zeros((n, n), dtype=np.int64)
    wait = state.waiting_matrix()
    left = state.idle.copy()
    for i in range(n):
        for j in rng.permutation(n):
            if i != j and mask[i, j] and left[i] > 0 and wait[i, j] > 0:
                k = int(rng.integers(0, min(left[i], wait[i, j]) + 1))
                x[i, j] = k
                left[i] -= k
        for j in rng.permutation(n):
            if i != j and mask[i, j] and left[i] > 0 and rng.random() < 0.3:
                k = int(rng.integers(0, left[i] + 1))
                y[i, j] = k
                left[i] -= k
    return FlowAction(x, y)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
