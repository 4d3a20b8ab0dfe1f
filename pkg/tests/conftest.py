import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wassbary.measures import DiscreteMeasure

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def local_min_measure():
    """Three atoms where X = [0, 1] is a local (not global) minimum."""
    return DiscreteMeasure(np.array([0.0, 0.9, 1.1]), np.array([0.01, 0.495, 0.495]))


def saddle_measure():
    """Three equal atoms where X = [0, 1] is a stationary, non-minimal point."""
    return DiscreteMeasure(np.array([0.0, 0.5, 1.5]), np.full(3, 1.0 / 3.0))


@pytest.fixture
def local_min():
    return local_min_measure()


@pytest.fixture
def saddle():
    return saddle_measure()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run."""
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
