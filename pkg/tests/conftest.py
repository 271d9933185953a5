import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("sqglab", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sqglab")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def wavevectors(st, r=6, nonzero=True):
    """Hypothesis strategy for integer wavevectors with |kx|, |ky| <= r."""
    pts = st.tuples(st.integers(-r, r), st.integers(-r, r))
    return pts.filter(lambda k: k != (0, 0)) if nonzero else pts


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
