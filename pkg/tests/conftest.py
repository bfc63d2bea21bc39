"""Shared renders and simulations at the default 128x128, 64-sample setting.

These are session-scoped because the acceptance checks and several module
tests read the same baseline and adaptive renders.
"""

import pytest

from asdr.arch.config import ArchConfig
from asdr.arch.sim import Features, simulate
from asdr.render import default_camera, render_asdr, render_baseline
from asdr.scene import make_scene

WIDTH = HEIGHT = 128
NS = 64


@pytest.fixture(scope="session")
def scene():
    return make_scene("spheres", 0)


@pytest.fixture(scope="session")
def camera():
    return default_camera(WIDTH, HEIGHT)


@pytest.fixture(scope="session")
def baseline(scene, camera):
    return render_baseline(scene, camera, NS)


@pytest.fixture(scope="session")
def asdr(scene, camera):
    return render_asdr(scene, camera, NS, d=5, delta=1 / 2048, n=2, eps=1e-4)


@pytest.fixture(scope="session")
def arch():
    return ArchConfig()


@pytest.fixture(scope="session")
def cache_sweep(asdr, arch):
    """Simulated stats of the adaptive trace for cache sizes 0, 2, 4, 8, 16."""
    return {c: simulate(asdr.trace, asdr, arch.replace(cache_entries=c), Features())
            for c in (0, 2, 4, 8, 16)}


@pytest.fixture(scope="session")
def strawman_stats(baseline, arch):
    return simulate(baseline.trace, baseline, arch, Features.parse("none"), label="strawman")


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(k, name, ok, detail)`` records and prints a PASS/FAIL line, then asserts."""

    def check(k, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d} {name}: {detail}"
        ACCEPTANCE[k] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
