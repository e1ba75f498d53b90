import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from modekit.core import PixelGrid

settings.register_profile("default", settings(deadline=None, max_examples=40,
                                              suppress_health_check=[HealthCheck.too_slow]))
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return PixelGrid.centered(7, 5, 1e-6)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
