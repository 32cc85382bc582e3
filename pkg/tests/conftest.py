import numpy as np
import pytest

from surplus_ope.core import ObservationSet, PriceGrid, UniformInterval
from surplus_ope.simbench import run_study

# acceptance lines collected by test_acceptance and echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def report_criterion():
    """Record and print one ``PASS``/``FAIL`` line per acceptance criterion."""

    def emit(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name}"
        if detail:
            line += f" | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


@pytest.fixture(scope="session")
def study():
    """``run_study`` memoised per argument set so heavy studies run once per session."""
    cache = {}

    def run(scenario, estimators, n_grid, reps, alpha=None, master_seed=0, **kw):
        key = (scenario, tuple(estimators), tuple(n_grid), reps, alpha, master_seed,
               tuple(sorted(kw.items())))
        if key not in cache:
            cache[key] = run_study(scenario, list(estimators), list(n_grid), reps, alpha,
                                   master_seed, **kw)
        return cache[key]

    return run


@pytest.fixture
def unit_example():
    """Prices uniform on [0, 1], valuations with ``P(V > p) = 1 - p^2``."""

    def make(n, seed=0):
        rng = np.random.default_rng(seed)
        p = rng.random(n)
        v = np.sqrt(rng.random(n))
        return ObservationSet(np.zeros((n, 0)), p, (v > p).astype(float), (0.0, 1.0))

    return make


@pytest.fixture
def unit_policy():
    return UniformInterval(0.0, 1.0)


@pytest.fixture
def unit_grid():
    return PriceGrid.uniform(0.0, 1.0, 200)
