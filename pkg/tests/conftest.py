from __future__ import annotations

import numpy as np
import pytest

from levyexit import dynamics as dy
from levyexit import geometry as geo
from levyexit.levy import LevyModel


@pytest.fixture(scope="session")
def iso15():
    return LevyModel.isotropic_stable(1.5, 2)


@pytest.fixture(scope="session")
def vdp():
    return dy.van_der_pol()


@pytest.fixture(scope="session")
def vdp_cycle(vdp):
    return dy.detect_attractor(vdp, geo.annulus([0, 0], 0.1, 4.0), [0.5, 0.5])


@pytest.fixture(scope="session")
def vdp_domain(vdp_cycle):
    # invariant annular domain: cycle scaled by 2, minus B_0.1(0)
    return geo.star_annulus(2.0 * vdp_cycle.points, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting: one PASS/FAIL line per criterion -----------------------------


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def report(request):
    def _report(criterion: str, passed: bool, detail: str = ""):
        line = f"{criterion} {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        request.config.acceptance_lines.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
