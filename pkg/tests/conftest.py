import numpy as np
import pytest
from hypothesis import settings

from steinflow.numcore import RngStream

settings.register_profile("steinflow", max_examples=40, deadline=None)
settings.load_profile("steinflow")


@pytest.fixture
def rng():
    return RngStream(1234, 0)


def central_fd(fn, x, eps=1e-6):
    """Plain central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        g[idx] = (fn(xp) - fn(xm)) / (2 * eps)
    return g


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
