import math
import os

import pytest
from hypothesis import HealthCheck, settings

from emitqec.noise import TimingParams

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def ideal_timing():
    """No decoherence anywhere."""
    return TimingParams(T_link=math.inf, T_idle=math.inf)


ACCEPTANCE: dict = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(num: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE[num] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[num])
