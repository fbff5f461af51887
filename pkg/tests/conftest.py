import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from .helpers import make_scenario

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def spec_consumer():
    """B=100, p_on=5, p_off=3, rho=0.5, a=400, b=20; vertex 0.4."""
    return make_scenario([100.0], [400.0], [20.0], 50.0)


def pytest_terminal_summary(terminalreporter):
    from .helpers import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
