import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def report_criterion(label: str, passed: bool, detail: str, seconds: float, budget: float) -> None:
    """Record one acceptance line; printed live and again in the session summary."""
    over = "" if seconds <= budget else f"; over the {budget:g}s budget"
    line = f"criterion {label}: {'PASS' if passed else 'FAIL'} ({detail}; {seconds:.1f}s{over})"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
