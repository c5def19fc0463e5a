"""Newton iteration for the discrete Cauchy-Dirichlet problem

    P(u) = D_t u - a^{ij}(x,t,u,Du) D_ij u - f(x,t,u,Du) = 0,   u = 0 on the parabolic boundary.

The linearization P'(u) is assembled with every derivative term inside the
operator: principal part a^{ij}(u), zeroth-order coefficient
``a^{ij}_u D_ij u + f_u`` and first-order coefficients
``D_{xi_l} a^{ij} D_ij u + D_{xi_l} f``.  Because the stencils match those
of the residual, P'(u) is the exact Jacobian of the discrete residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import report
from .calculus import SpaceTimeField, diff_t, gradient, hessian, lp_norm, w21p_norm
from .coeff import CoefficientSet, EllipticityError
from .expr import DomainError
from .linpar import LinearParabolicProblem, LinearSolveError, apply_linear_operator, solve_linear_parabolic

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 25


class NewtonError(RuntimeError):
    """Newton did not converge.  ``trace`` and the last iterate ``field`` are attached."""

    def __init__(self, message, trace, field=None):
        self.trace = trace
        self.field = field
        super().__init__(message)

    @property
    def diagnosis(self):
        return self.trace.diagnosis


@dataclass
class NewtonTrace:
    residual_norms: list = field(default_factory=list)
    increment_norms: list = field(default_factory=list)
    iterates: list = field(default_factory=list, repr=False)
    converged: bool = False
    diagnosis: str = "running"
    message: str = ""
    tol: float = DEFAULT_TOL

    @property
    def iterations(self):
        return len(self.increment_norms)

    @property
    def estimated_order(self):
        try:
            return convergence_order(self)
        except ValueError:
            return None

    def rows(self):
        inc = list(self.increment_norms) + [""] * (len(self.residual_norms) - len(self.increment_norms))
        return [(k, r, d) for k, (r, d) in enumerate(zip(self.residual_norms, inc))]

    def to_csv(self, path):
        return report.write_csv(path, ["k", "residual_p", "increment_w21p"], self.rows())


class _Jets:
    """u with its finite-difference jets and the coefficient pieces along it."""

    def __init__(self, cset: CoefficientSet, u: SpaceTimeField, derivatives=True):
        grid = u.grid
        self.u = u
        self.Du = gradient(u)
        self.H = hessian(u)
        self.Dt = diff_t(u)
        x, t = grid.coords[:-1], grid.coords[-1]
        xi = [d.values for d in self.Du]
        n = cset.dim
        self.A = np.empty(grid.shape + (n, n))
        self.A_u = np.empty_like(self.A)
        self.A_xi = np.empty(grid.shape + (n, n, n))
        for i in range(n):
            for j in range(n):
                fn = cset.a[i][j]
                self.A[..., i, j] = fn.evaluate(x, t, u.values, xi)
                if derivatives:
                    a_u, a_xi = fn.partials(x, t, u.values, xi)
                    self.A_u[..., i, j] = a_u
                    for l in range(n):
                        self.A_xi[..., i, j, l] = a_xi[l]
        self.F = cset.f.evaluate(x, t, u.values, xi) + cset.source_values(grid)
        if derivatives:
            self.F_u, F_xi = cset.f.partials(x, t, u.values, xi)
            self.F_xi = np.stack(F_xi, axis=-1)
        self.D2 = np.stack([np.stack([h.values for h in row], axis=-1) for row in self.H], axis=-2)


def _require_boundary_zero(u: SpaceTimeField, what="u"):
    if u.boundary_max() != 0.0:
        raise ValueError(f"{what} must vanish on the parabolic boundary (max |{what}| = {u.boundary_max():.3g})")


def _residual_from(jets, grid):
    principal = np.einsum("...ij,...ij->...", jets.A, jets.D2)
    r = jets.Dt.values - principal - jets.F
    return SpaceTimeField(grid, np.where(grid.interior, r, 0.0))


def residual(cset: CoefficientSet, u: SpaceTimeField) -> SpaceTimeField:
    """Node values of ``P(u)``: zero on the parabolic boundary."""
    _require_boundary_zero(u)
    return _residual_from(_Jets(cset, u, derivatives=False), u.grid)


def _linearize(cset, jets, grid, rhs=None, check=True):
    b = np.einsum("...ij,...ij->...", jets.A_u, jets.D2) + jets.F_u
    c = np.einsum("...ijl,...ij->...l", jets.A_xi, jets.D2) + jets.F_xi
    return LinearParabolicProblem(grid, jets.A, b=b, c=c, g=rhs, lam=cset.lam if check else None)


def linearize(cset: CoefficientSet, u: SpaceTimeField, rhs=None, check=True) -> LinearParabolicProblem:
    """The frozen-coefficient linear problem ``P'(u) v = rhs``.

    With ``check`` the principal part must satisfy the declared ellipticity
    bounds at every node (raises :class:`EllipticityError` otherwise).
    """
    return _linearize(cset, _Jets(cset, u), u.grid, rhs, check)


def frechet_apply(cset: CoefficientSet, u: SpaceTimeField, v: SpaceTimeField) -> SpaceTimeField:
    """``P'(u) v``."""
    return apply_linear_operator(linearize(cset, u, check=False), v)


def newton_step(cset: CoefficientSet, u: SpaceTimeField) -> SpaceTimeField:
    """``u + delta`` with ``P'(u) delta = -P(u)`` and ``delta = 0`` on the parabolic boundary."""
    _require_boundary_zero(u)
    jets = _Jets(cset, u)
    r = _residual_from(jets, u.grid)
    delta = solve_linear_parabolic(_linearize(cset, jets, u.grid, -r.values))
    return u + delta


def newton_solve(cset: CoefficientSet, start: SpaceTimeField, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                 damping=False, keep_iterates=False, divergence_factor=1e8):
    """Iterate Newton steps until ``||P(u_k)||_{p,Q} <= tol``.

    Returns ``(u, trace)``.  Raises :class:`NewtonError` with diagnosis
    ``diverged``, ``stalled``, ``max_iter`` or ``breakdown`` (ellipticity
    loss, a failed linear solve or a coefficient domain error).  With
    ``damping`` a step that increases the residual is halved up to 30 times.
    """
    _require_boundary_zero(start, "start")
    grid, p = start.grid, cset.p
    trace = NewtonTrace(tol=tol)
    u = start

    def fail(diagnosis, message):
        trace.diagnosis, trace.message = diagnosis, message
        log.info("newton %s after %d steps: %s", diagnosis, trace.iterations, message)
        raise NewtonError(f"Newton {diagnosis}: {message}", trace, u)

    try:
        jets = _Jets(cset, u)
    except DomainError as exc:
        fail("breakdown", str(exc))
    r = _residual_from(jets, grid)
    rn = lp_norm(r, p)
    trace.residual_norms.append(rn)
    if keep_iterates:
        trace.iterates.append(u)
    rn0 = max(rn, 1.0)
    while rn > tol:
        if trace.iterations >= max_iter:
            fail("max_iter", f"residual {rn:.3e} > tol {tol:.1e} after {max_iter} steps")
        try:
            delta = solve_linear_parabolic(_linearize(cset, jets, grid, -r.values))
        except (EllipticityError, LinearSolveError, DomainError) as exc:
            fail("breakdown", str(exc))
        step = 1.0
        while True:
            try:
                cand = u + step * delta
                cand_jets = _Jets(cset, cand)
                cand_r = _residual_from(cand_jets, grid)
                cand_rn = lp_norm(cand_r, p)
            except (DomainError, ValueError):
                cand_rn = np.inf
            if not damping or cand_rn <= rn or step < 2.0**-30:
                break
            step /= 2
        if not np.isfinite(cand_rn):
            u = cand if np.all(np.isfinite(cand.values)) else u
            fail("diverged", "residual is no longer finite")
        trace.increment_norms.append(w21p_norm(cand - u, p))
        u, jets, r, rn = cand, cand_jets, cand_r, cand_rn
        trace.residual_norms.append(rn)
        if keep_iterates:
            trace.iterates.append(u)
        log.debug("newton step %d: residual %.3e", trace.iterations, rn)
        if rn > divergence_factor * rn0:
            fail("diverged", f"residual grew to {rn:.3e}")
        res = trace.residual_norms
        if len(res) > 6 and rn > 0.99 * res[-7] and rn > tol:
            fail("stalled", f"residual stuck near {rn:.3e}")
    trace.converged, trace.diagnosis = True, "converged"
    return u, trace


def convergence_order(trace: NewtonTrace, floor=None) -> float:
    """Slope of ``log |delta_{k+1}|`` against ``log |delta_k|`` over increments above the floor.

    The default floor is ``1e-10 * max(1, |delta_0|)``; increments below it
    are rounding noise.
    """
    inc = np.asarray(trace.increment_norms if isinstance(trace, NewtonTrace) else trace, dtype=float)
    if floor is None:
        floor = 1e-10 * max(1.0, float(inc[0])) if len(inc) else 0.0
    usable = []
    for d in inc:
        if not d > floor:
            break
        usable.append(d)
    if len(usable) < 3:
        raise ValueError(f"need at least 3 increments above the floor {floor:.1e}, got {len(usable)}")
    x, y = np.log(usable[:-1]), np.log(usable[1:])
    return float(np.polyfit(x, y, 1)[0])


def affine_solution(cset: CoefficientSet, grid):
    """Direct solve of an affine problem, for comparison with one Newton step."""
    if not cset.is_affine():
        raise ValueError("coefficient set is not affine in (u, xi)")
    zero = SpaceTimeField.zeros(grid)
    jets = _Jets(cset, zero)
    return solve_linear_parabolic(_linearize(cset, jets, grid, -_residual_from(jets, grid).values))
