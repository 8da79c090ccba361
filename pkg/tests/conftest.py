import os

import pytest
from hypothesis import HealthCheck, settings

from tbcal.calibrator import DetectorParams
from tbcal.photostats import TwinBeamParams

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def weak_beam():
    """Weak twin beam with a few-mode long-tailed noise component per arm."""
    return TwinBeamParams.from_values(38, 0.16, 1.4e-3, 39, 5e-3, 24)


@pytest.fixture
def weak_detector():
    return DetectorParams(0.085, 0.086, 0.326, 0.375)


@pytest.fixture
def pure_pairs():
    return TwinBeamParams.from_values(1, 1, 1, 0, 1, 0)


# -- acceptance verdicts -----------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def record(criterion, passed, detail):
        ACCEPTANCE[criterion] = (bool(passed), detail)
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
