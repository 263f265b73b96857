import numpy as np
import pytest
from scipy import integrate, stats


def prob_first_beats_second(a1, b1, a2, b2):
    """P(X > Y) for independent X ~ Beta(a1, b1), Y ~ Beta(a2, b2), by quadrature."""
    x, y = stats.beta(a1, b1), stats.beta(a2, b2)
    value, _ = integrate.quad(lambda t: x.pdf(t) * y.cdf(t), 0, 1)
    return value


@pytest.fixture(scope="session")
def five_sixths():
    value = prob_first_beats_second(2, 1, 1, 2)
    assert value == pytest.approx(5 / 6, abs=1e-12)
    return value


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
