import numpy as np
import pytest

from parnewt.calculus import SpaceTimeField, lp_norm, w21p_norm
from parnewt.coeff import CoefficientSet, EllipticityError
from parnewt.linpar import LinearParabolicProblem, apply_linear_operator, solve_linear_parabolic
from parnewt.mesh import build_grid
from parnewt.newton import (NewtonError, NewtonTrace, affine_solution, convergence_order, frechet_apply, linearize,
                            newton_solve, newton_step, residual)
from parnewt import report

from conftest import QUASILINEAR, SEMILINEAR, manufactured, smooth_field


def heat_with_source(grid):
    return CoefficientSet("1", "sin(pi*x1)*(1 + t)", 2.0, 4.0)


def test_residual_of_manufactured_pair_decays():
    res = []
    for n in (11, 21, 41):
        g = build_grid(1, [1.0], [n], 1.0, (n - 1) ** 2 // 10 + 1)
        mp = manufactured(*QUASILINEAR, g)
        res.append(lp_norm(residual(mp.problem, mp.exact), 4))
    assert res[0] > res[1] > res[2]
    assert np.log(res[0] / res[2]) / np.log(4) > 1.7


def test_residual_of_linear_solution_is_small(grid1):
    cset = heat_with_source(grid1)
    g = cset.f.evaluate(grid1.coords[:-1], grid1.coords[-1], 0.0, [0.0])
    u = solve_linear_parabolic(LinearParabolicProblem(grid1, 1.0, g=g))
    assert np.max(np.abs(residual(cset, u).values)) <= 1e-9


def test_residual_trivial_and_boundary_enforced(grid1):
    cset = CoefficientSet("1 + u^2", "u*xi1", 2.0, 4.0)
    assert np.all(residual(cset, SpaceTimeField.zeros(grid1)).values == 0)
    bad = SpaceTimeField(grid1, np.ones(grid1.shape))
    with pytest.raises(ValueError, match="parabolic boundary"):
        residual(cset, bad)


def test_frechet_of_affine_set_is_the_linear_operator(grid2):
    cset = CoefficientSet([["1 + x1", "0"], ["0", "2"]], "3*u - xi2 + x1*t", 3.0, 5.0)
    v = smooth_field(grid2, 4)
    prob = LinearParabolicProblem(grid2, linearize(cset, SpaceTimeField.zeros(grid2)).A, b=3.0,
                                  c=np.broadcast_to([0.0, -1.0], grid2.shape + (2,)))
    expect = apply_linear_operator(prob, v).values
    for seed in (1, 2):
        got = frechet_apply(cset, smooth_field(grid2, seed) * 5.0, v).values
        assert np.allclose(got, expect, atol=1e-10)
    assert np.all(frechet_apply(cset, v, SpaceTimeField.zeros(grid2)).values == 0)


@pytest.mark.parametrize("coeffs", [QUASILINEAR, SEMILINEAR, ("1 + 0.3*xi1^2", "sin(u)*xi1")])
def test_directional_derivative(coeffs, grid1):
    g = build_grid(1, [1.0], [21], 1.0, 21)
    mp = manufactured(*coeffs, g)
    u, v = smooth_field(g, 10), smooth_field(g, 11)
    Pu = residual(mp.problem, u)
    Jv = frechet_apply(mp.problem, u, v)
    errs = []
    for eps in (1e-3, 1e-4, 1e-5):
        q = (residual(mp.problem, u + v * eps) - Pu) * (1 / eps) - Jv
        errs.append(lp_norm(q, 4))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] / errs[0] < 1e-1


def test_frechet_second_order_remainder_constant_stable():
    g = build_grid(1, [1.0], [21], 1.0, 21)
    mp = manufactured(*QUASILINEAR, g)
    u, v = smooth_field(g, 20), smooth_field(g, 21)
    Pu = residual(mp.problem, u)
    Jv = frechet_apply(mp.problem, u, v)
    C = [lp_norm(residual(mp.problem, u + v * e) - Pu - Jv * e, 4) / e**2 for e in (1e-2, 1e-3, 1e-4)]
    assert max(C) / min(C) <= 1.5


def test_affine_problem_one_step(grid2):
    cset = CoefficientSet([["1 + 0.5*x1", "0.1"], ["0.1", "1"]], "2*u + xi1 + sin(pi*x2)", 2.0, 5.0)
    direct = affine_solution(cset, grid2)
    for seed in (0, 1, 2):
        start = smooth_field(grid2, seed) * 3.0
        u1 = newton_step(cset, start)
        assert np.max(np.abs(u1.values - direct.values)) <= 1e-9
    u, trace = newton_solve(cset, SpaceTimeField.zeros(grid2))
    assert trace.iterations == 1
    with pytest.raises(ValueError, match="insufficient|at least 3"):
        convergence_order(trace)


def test_fixed_point_step_is_small(semilinear):
    mp, u0, _ = semilinear
    u1 = newton_step(mp.problem, u0)
    assert w21p_norm(u1 - u0, 4) <= 1e-9


def test_ellipticity_violation_aborts_step(grid1):
    cset = CoefficientSet("1 + u", "0", 2.0, 4.0)
    with pytest.raises(EllipticityError):
        newton_step(cset, SpaceTimeField(grid1, np.where(grid1.interior, 3.0, 0.0)))


def test_quasilinear_converges_quickly(quasilinear):
    mp, u0, trace = quasilinear
    assert trace.converged and trace.iterations <= 6
    assert trace.residual_norms[-1] <= 1e-10
    assert np.max(np.abs(u0.values - mp.exact.values)) < 5e-3


def test_semilinear_quadratic_order(semilinear):
    _, _, trace = semilinear
    assert 1.7 <= convergence_order(trace) <= 2.3


@pytest.mark.parametrize("coeffs", [QUASILINEAR, SEMILINEAR])
def test_far_start_is_not_reported_as_success(coeffs, bench_grid):
    mp = manufactured(*coeffs, bench_grid)
    with pytest.raises(NewtonError) as err:
        newton_solve(mp.problem, smooth_field(bench_grid, 0) * 1e3)
    assert err.value.diagnosis in ("diverged", "stalled", "max_iter", "breakdown")
    assert not err.value.trace.converged


def test_max_iter_diagnosis(bench_grid):
    mp = manufactured(*QUASILINEAR, bench_grid)
    with pytest.raises(NewtonError) as err:
        newton_solve(mp.problem, SpaceTimeField.zeros(bench_grid), max_iter=2)
    assert err.value.diagnosis == "max_iter"
    assert len(err.value.trace.increment_norms) == 2


def test_trace_invariants_and_iterates(bench_grid):
    mp = manufactured(*QUASILINEAR, bench_grid)
    u, trace = newton_solve(mp.problem, SpaceTimeField.zeros(bench_grid), keep_iterates=True)
    assert len(trace.iterates) == len(trace.residual_norms) == len(trace.increment_norms) + 1
    assert all(np.isfinite(trace.residual_norms))
    assert all(it.boundary_max() == 0.0 for it in trace.iterates)
    tail = trace.residual_norms[-4:]
    assert all(b < a for a, b in zip(tail, tail[1:]))


def test_damping_keeps_residual_monotone(bench_grid):
    mp = manufactured(*SEMILINEAR, bench_grid)
    u, trace = newton_solve(mp.problem, smooth_field(bench_grid, 0) * 10.0, damping=True)
    r = trace.residual_norms
    assert all(b <= a for a, b in zip(r, r[1:]))


@pytest.mark.parametrize("coeffs", [QUASILINEAR, SEMILINEAR])
def test_two_starts_same_limit(coeffs, bench_grid):
    mp = manufactured(*coeffs, bench_grid)
    u, _ = newton_solve(mp.problem, SpaceTimeField.zeros(bench_grid))
    v, _ = newton_solve(mp.problem, smooth_field(bench_grid, 7) * 0.5)
    assert w21p_norm(u - v, 4) <= 10 * 1e-10


def test_convergence_order_constructed():
    geometric = NewtonTrace(increment_norms=[0.5**k for k in range(8)])
    assert convergence_order(geometric) == pytest.approx(1.0)
    quad = NewtonTrace(increment_norms=[1e-1, 1e-2, 1e-4, 1e-8, 1e-16])
    assert convergence_order(quad) == pytest.approx(2.0)


def test_trace_csv(tmp_path, semilinear):
    _, _, trace = semilinear
    path = trace.to_csv(tmp_path / "trace.csv")
    header, rows = report.read_csv(path)
    assert header == ["k", "residual_p", "increment_w21p"]
    assert len(rows) == trace.iterations + 1 and rows[-1][2] == ""
    assert float(rows[0][1]) == trace.residual_norms[0]
