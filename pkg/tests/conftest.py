import pytest
from hypothesis import HealthCheck, settings

from exactpen.model import TimeGrid

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# criterion number -> one-line verdict, filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def grid():
    return TimeGrid(1.0, 101)
