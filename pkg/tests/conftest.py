import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shiftcal.scenarios import grid_domain

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid():
    return grid_domain()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL for an acceptance criterion and return the flag."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
        request.config.stash.setdefault(_VERDICTS, []).append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
