import numpy as np
import pytest
from hypothesis import settings

from compshift.data import normalize

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(x, y):
    """Dataset in identity units so tests can reason about raw values."""
    from compshift.data import NormStats

    x = np.asarray(x, dtype=float)
    return normalize(x, y, stats=NormStats.identity(x.shape[1]))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
