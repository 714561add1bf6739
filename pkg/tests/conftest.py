import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def bloch_vectors(draw, max_radius=1.0):
    """Points in the ball of ``max_radius``, drawn via direction and radius."""
    v = np.array(draw(st.lists(st.floats(-1, 1, **finite), min_size=3, max_size=3)))
    n = np.linalg.norm(v)
    if n < 1e-6:
        v, n = np.array([0.0, 0.0, 1.0]), 1.0
    r = draw(st.floats(0, max_radius, **finite))
    return v / n * r


@st.composite
def unit_axes(draw):
    v = np.array(draw(st.lists(st.floats(-1, 1, **finite), min_size=3, max_size=3)))
    n = np.linalg.norm(v)
    if n < 1e-3:
        return np.array([0.0, 0.0, 1.0])
    return v / n


stretch = st.floats(0, 0.99, **finite)
angles = st.floats(0, 2 * np.pi, **finite)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
