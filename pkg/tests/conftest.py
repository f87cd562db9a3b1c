import numpy as np
import pytest
from hypothesis import settings

# compiled kernels load on first use, which can exceed per-example deadlines
settings.register_profile("smcfw", deadline=None)
settings.load_profile("smcfw")


class CountingModel:
    """Delegates to a model and counts the state particles it propagates."""

    def __init__(self, base):
        self._base = base
        self.transitions = 0

    def transition_sample(self, theta, x, rng):
        self.transitions += int(np.prod(np.shape(x)[:2]))
        return self._base.transition_sample(theta, x, rng)

    def __getattr__(self, name):
        return getattr(self._base, name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def within_se(samples, target, k=3.0):
    samples = np.asarray(samples, dtype=float)
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    return abs(samples.mean() - target) <= k * se


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion and return the verdict."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
