import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from optstop.market import MarketModel
from optstop.sampling import MuParams

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def record_criterion(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  criterion {label}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def max_call(n=2, x0=100.0, J=9, **kw):
    params = dict(r=0.05, delta=0.1, sigma=0.2, T=3.0, strike=100.0)
    params.update(kw)
    return MarketModel(n=n, x0=x0, J=J, **params)


@pytest.fixture
def model2():
    return max_call(2)


@pytest.fixture
def mu2():
    return MuParams.from_offset(100.0, -0.105, 0.26, 2)


class ZeroPayoff:
    """Wraps a model so every cash flow is zero."""

    def __init__(self, model):
        self.model = model
        self.J = model.J
        self.homogeneous = model.homogeneous
        self.start = model.start

    def cashflow(self, j, x):
        return np.zeros(np.asarray(x).shape[:-1])

    def transition(self, j, x, rng):
        return self.model.transition(j, x, rng)
