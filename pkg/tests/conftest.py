import numpy as np
import pytest

from invuq.calib import IndependentPrior, prepare_context
from invuq.model import generate_dataset, make_benchmark

# acceptance outcomes, filled in by test_acceptance and printed at the end
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0].rstrip("abc")), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def benchmark():
    return make_benchmark()


@pytest.fixture(scope="session")
def benchmark_context(benchmark):
    sim = benchmark.simulator
    prior = IndependentPrior(sim.calib_dists)
    ctx = prepare_context(generate_dataset(benchmark), sim, prior)
    return ctx, prior


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
