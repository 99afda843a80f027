import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

EXAMPLE5 = np.array([0.23, 1.33, 0.73, 0.28, 1.13, 1.65, 1.35, 2.00, 1.92, 0.12])


@pytest.fixture
def example5():
    return EXAMPLE5.copy()


def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(LINES, key=int):
            terminalreporter.write_line(LINES[key])
