import numpy as np
import pytest

from regionblend.denoiser import seeded_init
from regionblend.fixtures import fixture_set
from regionblend.schedule import make_schedule


@pytest.fixture(scope="session")
def sched():
    return make_schedule(1000, 1e-4, 0.02, 50)


@pytest.fixture(scope="session")
def model():
    return seeded_init(7)


@pytest.fixture(scope="session")
def fixtures():
    return fixture_set(seed=0, count=20, multi=2)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion and fail the test on FAIL."""

    def report(number, title, passed, detail, elapsed, budget):
        ok = bool(passed) and elapsed < budget
        line = (f"criterion {number} {'PASS' if ok else 'FAIL'} | {title} | {detail}"
                f" | {elapsed:.2f}s of {budget}s")
        print(line)
        _ACCEPTANCE_LINES.append((number, line))
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
