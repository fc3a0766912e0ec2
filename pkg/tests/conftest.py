import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vosynth import oracle

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")


@pytest.fixture(scope="session")
def oracle_snippet():
    """One rendered ridge snippet shared by read-only tests."""
    scene, sn = oracle.random_snippet(5)
    return scene, sn


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


# one line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES = {}


def record_criterion(number: int, ok: bool, title: str, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
