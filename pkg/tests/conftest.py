import numpy as np
import pytest

from compsep import make_profile, make_quadratic_family


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def quad20():
    p = make_quadratic_family(20, 5, 5, 4.0, 0.1, seed=1)
    return p, make_profile(p, "exact")


@pytest.fixture(scope="session")
def quad_small():
    p = make_quadratic_family(6, 3, 3, 2.0, 0.1, seed=7)
    return p, make_profile(p, "exact")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
