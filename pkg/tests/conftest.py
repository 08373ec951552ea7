from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gexpect.uncertainty import ThetaSet

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def interval():
    return ThetaSet.interval(0.5, 1.0)


@pytest.fixture
def unit():
    return ThetaSet.interval(1.0, 1.0)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def gauss_hermite(fn, sigma: float = 1.0, nodes: int = 120) -> float:
    """``E[fn(sigma Z)]`` for standard normal ``Z``."""
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    return float(np.sum(w * fn(sigma * z)) / np.sum(w))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
