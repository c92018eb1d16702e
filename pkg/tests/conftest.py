import numpy as np
import pytest

from uwdpg.mesh import uniform_hierarchy, uniform_mesh
from uwdpg.system import Problem, build_system


@pytest.fixture(scope="session")
def wave_2pi():
    return Problem.plane_wave(2 * np.pi, p=2)


@pytest.fixture(scope="session")
def system_4x4(wave_2pi):
    return build_system(uniform_mesh(4), wave_2pi)


@pytest.fixture(scope="session")
def two_level_4x4(wave_2pi):
    return uniform_hierarchy(2, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full table sweeps (minutes)")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(mod.RESULTS):
        rows = mod.RESULTS[crit]
        bad = [d for ok, d in rows if not ok]
        verdict = "PASS" if not bad else "FAIL"
        tr.write_line(f"[criterion {crit}] {verdict} ({len(rows) - len(bad)}/{len(rows)} checks)"
                      + (": " + "; ".join(bad) if bad else
                         ": " + "; ".join(d for _, d in rows) if len(rows) <= 3 else ""))
