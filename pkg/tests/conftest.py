import numpy as np
import pytest

from parnewt.calculus import SpaceTimeField
from parnewt.coeff import CoefficientSet
from parnewt.mesh import build_grid
from parnewt.mms import manufacture
from parnewt.newton import newton_solve

QUASILINEAR = ("1 + 0.5*sin(u)", "u*xi1")
SEMILINEAR = ("1", "u^2")


@pytest.fixture
def grid1():
    return build_grid(1, [1.0], [11], 1.0, 11)


@pytest.fixture
def grid2():
    return build_grid(2, [1.0, 1.0], [9, 9], 0.5, 6)


@pytest.fixture(scope="session")
def bench_grid():
    return build_grid(1, [1.0], [41], 1.0, 41)


def manufactured(a, f, grid, u_exact="t*sin(pi*x1)", lam=2.0, p=4.0):
    return manufacture(u_exact, CoefficientSet(a, f, lam, p), grid)


@pytest.fixture(scope="session")
def quasilinear(bench_grid):
    mp = manufactured(*QUASILINEAR, bench_grid)
    u0, trace = newton_solve(mp.problem, SpaceTimeField.zeros(bench_grid))
    return mp, u0, trace


@pytest.fixture(scope="session")
def semilinear(bench_grid):
    mp = manufactured(*SEMILINEAR, bench_grid, u_exact="t*x1*(1 - x1)")
    u0, trace = newton_solve(mp.problem, SpaceTimeField.zeros(bench_grid))
    return mp, u0, trace


def smooth_field(grid, seed):
    """A random smooth field vanishing on the parabolic boundary."""
    rng = np.random.default_rng(seed)
    coords = grid.coords
    t = coords[-1]
    vals = np.zeros(grid.shape)
    for _ in range(3):
        term = t * rng.uniform(0.5, 1.5) * np.cos(rng.uniform(0, 2) * t)
        for i in range(grid.dim):
            L = grid.extents[i]
            term = term * np.sin(np.pi * rng.integers(1, 4) * coords[i] / L)
        vals += rng.normal() * term
    vals[~grid.interior] = 0.0
    return SpaceTimeField(grid, vals)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py::test_criterion_" not in rep.nodeid:
                continue
            name = rep.nodeid.split("::")[-1]
            number = int(name.split("_")[2])
            detail = dict(rep.user_properties).get("detail", "")
            lines.append((number, f"criterion {number:2d} {outcome.upper()[:4]}  {name}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
