import logging
from functools import lru_cache

import numpy as np
import pytest

from stochleaf import example1_linear_model, example1_model, example2_model
from stochleaf.noise import generate_brownian_path, ou_stationary


def pytest_configure(config):
    config.addinivalue_line("markers", "invariants: property suites (projection, semigroup, derivatives, cut-off)")


@pytest.fixture(autouse=True)
def _quiet_gap_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="stochleaf")


@lru_cache(maxsize=None)
def ou_for(seed, t_max=20.0, dt=1e-3, t_min=-20.0):
    return ou_stationary(generate_brownian_path(seed, t_min, t_max, dt))


@pytest.fixture(scope="session")
def ex1():
    return example1_model()


@pytest.fixture(scope="session")
def ex1_nocut():
    return example1_model(cutoff_radius=None)


@pytest.fixture(scope="session")
def ex1_linear():
    return example1_linear_model()


@pytest.fixture(scope="session")
def ex2():
    return example2_model(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert."""

    def record(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'} | {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
