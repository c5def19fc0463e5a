import numpy as np
import pytest

from parnewt import report
from parnewt.calculus import SpaceTimeField, lp_norm, w21p_norm
from parnewt.coeff import CoefficientSet, EllipticityError
from parnewt.linpar import LinearParabolicProblem, solve_linear_parabolic
from parnewt.perturb import (Perturbation, linearized_sensitivity, perturbed_set, solution_map, stability_sweep,
                             vmo_persistence)

from conftest import smooth_field

JUMP = Perturbation([["0"]], "sign(x1 - 0.5)")
EPS = [1e-4, 1e-3, 1e-2, 1e-1]


def test_zero_eps_evaluates_identically(grid1):
    base = CoefficientSet("1 + 0.5*sin(u)", "u*xi1 + x1", 2.0, 4.0)
    pert = Perturbation([["cos(x1)"]], "u^2")
    pset = perturbed_set(base, pert, 0.0)
    x, t = grid1.coords[:-1], grid1.coords[-1]
    u = smooth_field(grid1, 3).values
    xi = [np.cos(u)]
    assert np.array_equal(pset.a[0][0].evaluate(x, t, u, xi), base.a[0][0].evaluate(x, t, u, xi))
    assert np.array_equal(pset.f.evaluate(x, t, u, xi), base.f.evaluate(x, t, u, xi))


def test_constant_shift():
    pset = perturbed_set(CoefficientSet("1", "0", 2.0, 4.0), Perturbation([["1"]], "0"), 0.1)
    assert pset.a[0][0].evaluate([0.3], 0.2, 0.0, [0.0]) == pytest.approx(1.1)


def test_shift_that_breaks_ellipticity(grid1):
    base = CoefficientSet("1", "0", 1.0, 4.0)
    with pytest.raises(EllipticityError):
        perturbed_set(base, Perturbation([["-1"]], "0"), 1.0, SpaceTimeField.zeros(grid1))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        perturbed_set(CoefficientSet("1", "0", 2.0, 4.0), Perturbation.zero(2), 0.1)


def test_phi_at_zero_is_u0(quasilinear):
    mp, u0, _ = quasilinear
    phi, trace = solution_map(mp.problem, JUMP, 0.0, u0, with_trace=True)
    assert trace.iterations == 0
    assert np.array_equal(phi.values, u0.values)


def test_small_source_shift_converges_fast(semilinear):
    mp, u0, _ = semilinear
    _, trace = solution_map(mp.problem, Perturbation([["0"]], "1"), 1e-2, u0, with_trace=True)
    assert trace.converged and trace.iterations <= 3


def test_large_shift_is_reported(semilinear):
    mp, u0, _ = semilinear
    rep = stability_sweep(mp.problem, Perturbation([["0"]], "1"), [1e-2, 10.0], u0)
    assert rep.converged[0]
    assert len(rep.converged) == 2  # eps = 10 is recorded either way
    if not rep.converged[1]:
        assert rep.messages and np.isnan(rep.deviations[1])


def test_zero_direction_has_zero_sensitivity(quasilinear):
    mp, u0, _ = quasilinear
    v = linearized_sensitivity(mp.problem, Perturbation.zero(1), u0)
    assert np.all(v.values == 0)


def test_sensitivity_for_heat_is_the_linear_solve(bench_grid):
    base = CoefficientSet("1", "0", 2.0, 4.0)
    u0 = SpaceTimeField.zeros(bench_grid)
    pert = Perturbation([["0"]], "x1*(1 - x1)*exp(t)")
    v = linearized_sensitivity(base, pert, u0)
    g = pert.f_tilde.evaluate(bench_grid.coords[:-1], bench_grid.coords[-1], 0.0, [0.0])
    w = solve_linear_parabolic(LinearParabolicProblem(bench_grid, 1.0, g=np.broadcast_to(g, bench_grid.shape)))
    assert np.max(np.abs(v.values - w.values)) <= 1e-12
    phi = solution_map(base, pert, 0.3, u0)
    assert np.max(np.abs(phi.values - 0.3 * v.values)) <= 1e-9


def test_sensitivity_is_first_order(quasilinear):
    mp, u0, _ = quasilinear
    pert = Perturbation([["0.2*x1"]], "cos(u)")
    v = linearized_sensitivity(mp.problem, pert, u0)
    errs = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        phi = solution_map(mp.problem, pert, eps, u0, tol=1e-12)
        errs.append(w21p_norm((phi - u0) * (1 / eps) - v, 4))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 0.8)


def test_sweep_is_linear_in_eps(quasilinear):
    mp, u0, _ = quasilinear
    rep = stability_sweep(mp.problem, JUMP, EPS, u0)
    assert rep.converged.all()
    assert 0.9 <= rep.slope <= 1.1
    norm = rep.normalized_sensitivity_error
    assert np.all(np.diff(norm) > 0)
    assert rep.largest_convergent == EPS[-1]


def test_doubling_the_direction(quasilinear):
    mp, u0, _ = quasilinear
    eps = 1e-2
    d1 = solution_map(mp.problem, JUMP, eps, u0) - u0
    d2 = solution_map(mp.problem, JUMP.scaled(2.0), eps / 2, u0) - u0
    assert w21p_norm(d1 - d2, 4) <= 1e-9 * max(1.0, w21p_norm(d1, 4))


def test_parallel_sweep_matches_serial(semilinear):
    mp, u0, _ = semilinear
    pert = Perturbation([["0.1"]], "x1")
    a = stability_sweep(mp.problem, pert, EPS, u0)
    b = stability_sweep(mp.problem, pert, EPS, u0, workers=3)
    assert np.array_equal(a.deviations, b.deviations)


@pytest.mark.parametrize("eps", [[], [0.1, 0.01], [0.0, 0.1], [-1e-3]])
def test_sweep_rejects_bad_eps(eps, semilinear):
    mp, u0, _ = semilinear
    with pytest.raises(ValueError):
        stability_sweep(mp.problem, JUMP, eps, u0)


def test_vmo_persistence(quasilinear):
    mp, u0, _ = quasilinear
    pert = Perturbation([["sign(x1 - 0.5)"]], "0")
    for eps in (1e-3, 1e-2, 1e-1):
        phi = solution_map(mp.problem, pert, eps, u0)
        rep = vmo_persistence(mp.problem, pert, eps, u0, phi, [0.05, 0.1, 0.2])
        assert rep.holds, (eps, rep.difference, rep.bound)


def test_sweep_csv(tmp_path, quasilinear):
    mp, u0, _ = quasilinear
    rep = stability_sweep(mp.problem, JUMP, EPS, u0)
    header, rows = report.read_csv(rep.to_csv(tmp_path / "s.csv"))
    assert header == ["epsilon", "deviation_w21p", "sensitivity_error", "converged"]
    assert len(rows) == len(EPS) + 1
    assert rows[-1][0] == "slope" and float(rows[-1][1]) == pytest.approx(rep.slope)
