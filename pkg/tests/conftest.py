import numpy as np
import pytest

from fbsde_lsmc.dynamics import DynamicsModel, lq_model


@pytest.fixture
def scalar_lq():
    return lq_model(0.0, 1.0, 0.5, 1.0, 1.0, 0.0)


def scalar_model(f=0.0, G=1.0, Sigma=1.0, Gamma=None, name="scalar"):
    """One-dimensional model with constant coefficients."""
    return DynamicsModel(
        n=1, nu=1, p=1,
        drift=lambda t, X: np.full_like(X, f),
        control_matrix=lambda t, X: np.array([[G]]),
        diffusion=lambda t, X: np.array([[Sigma]]),
        gamma=None if Gamma is None else (lambda t, X: np.array([[Gamma]])),
        name=name,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""

    def record(name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
