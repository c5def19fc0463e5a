"""Coefficient perturbations and the dependence of the solution on them.

A perturbation direction ``(a~, f~)`` at size ``eps`` replaces the data by
``a + eps a~`` and ``f + eps f~``.  The solution map ``eps -> Phi(eps)`` is
evaluated by warm-started Newton; its derivative at zero solves

    P'(u0) v = a~^{ij}(x,t,u0,Du0) D_ij u0 + f~(x,t,u0,Du0),   v = 0 on the parabolic boundary.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from . import report
from .calculus import SpaceTimeField, gradient, hessian, w1inf_norm, w21p_norm
from .coeff import CoefficientFn, CoefficientSet, CompactBox, as_fn, composed, lipschitz_estimate, require_ellipticity
from .linpar import solve_linear_parabolic
from .newton import DEFAULT_MAX_ITER, DEFAULT_TOL, NewtonError, linearize, newton_solve
from .oscillation import composed_vmo_modulus

log = logging.getLogger(__name__)


@dataclass
class Perturbation:
    """Direction ``(a_tilde, f_tilde)``; ``magnitude`` multiplies both."""

    a_tilde: tuple
    f_tilde: CoefficientFn
    magnitude: float = 1.0

    def __post_init__(self):
        a = self.a_tilde
        if isinstance(a, (str, int, float, CoefficientFn)):
            a = [[a]]
        self.a_tilde = tuple(tuple(as_fn(e) for e in row) for row in a)
        self.f_tilde = as_fn(self.f_tilde)
        if not np.isfinite(self.magnitude):
            raise ValueError("perturbation magnitude must be finite")

    @classmethod
    def zero(cls, dim):
        return cls([["0"] * dim for _ in range(dim)], "0")

    @property
    def dim(self):
        return len(self.a_tilde)

    def scaled(self, c):
        return Perturbation(self.a_tilde, self.f_tilde, self.magnitude * c)


def _shifted(fn, coef, direction):
    return CoefficientFn(ex.add(fn.tree, ex.mul(ex.Num(float(coef)), direction.tree)))


def perturbed_set(base: CoefficientSet, pert: Perturbation, eps, u0: SpaceTimeField | None = None) -> CoefficientSet:
    """``(a + eps m a~, f + eps m f~)`` with ``m`` the perturbation magnitude.

    With ``u0`` the two-sided ellipticity bound is re-checked along it and
    :class:`~parnewt.coeff.EllipticityError` names the worst node.
    """
    if pert.dim != base.dim:
        raise ValueError(f"perturbation is {pert.dim}D but the coefficient set is {base.dim}D")
    c = float(eps) * pert.magnitude
    n = base.dim
    a = [[_shifted(base.a[i][j], c, pert.a_tilde[i][j]) for j in range(n)] for i in range(n)]
    out = base.replace(a=a, f=_shifted(base.f, c, pert.f_tilde))
    if u0 is not None:
        require_ellipticity(out, u0)
    return out


def solution_map(base, pert, eps, u0: SpaceTimeField, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, damping=False,
                 with_trace=False):
    """``Phi(eps)``: Newton on the perturbed problem started from ``u0``."""
    cset = perturbed_set(base, pert, eps, u0)
    u, trace = newton_solve(cset, u0, tol=tol, max_iter=max_iter, damping=damping)
    return (u, trace) if with_trace else u


def linearized_sensitivity(base: CoefficientSet, pert: Perturbation, u0: SpaceTimeField) -> SpaceTimeField:
    """``d Phi / d eps`` at zero."""
    grid = u0.grid
    n = base.dim
    Du = gradient(u0)
    H = hessian(u0)
    x, t, xi = grid.coords[:-1], grid.coords[-1], [d.values for d in Du]
    rhs = pert.f_tilde.evaluate(x, t, u0.values, xi)
    for i in range(n):
        for j in range(n):
            rhs = rhs + pert.a_tilde[i][j].evaluate(x, t, u0.values, xi) * H[i][j].values
    rhs = pert.magnitude * np.broadcast_to(rhs, grid.shape)
    return solve_linear_parabolic(linearize(base, u0, rhs=rhs, check=False))


@dataclass
class StabilityReport:
    """Per-eps results of a sweep.

    ``sensitivity_error`` is the first-order remainder
    ``||Phi(eps) - u0 - eps v||_{W^{2,1}_p}``; dividing by ``eps`` gives
    ``||(Phi(eps) - u0)/eps - v||``, which is ``O(eps)`` for a differentiable map.
    """

    epsilons: np.ndarray
    deviations: np.ndarray
    sensitivity_error: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    messages: tuple = ()

    @property
    def normalized_sensitivity_error(self):
        return self.sensitivity_error / self.epsilons

    @property
    def slope(self):
        """Log-log slope of deviations against eps over converged entries with positive deviation."""
        ok = self.converged & (self.deviations > 0) & (self.epsilons > 0)
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.epsilons[ok]), np.log(self.deviations[ok]), 1)[0])

    @property
    def largest_convergent(self):
        ok = self.epsilons[self.converged]
        return float(ok.max()) if len(ok) else float("nan")

    def rows(self):
        return list(zip(self.epsilons, self.deviations, self.sensitivity_error, self.converged.tolist()))

    def to_csv(self, path):
        return report.write_csv(path, ["epsilon", "deviation_w21p", "sensitivity_error", "converged"], self.rows(),
                                footer=("slope", self.slope, "", ""))


def stability_sweep(base, pert, epsilons, u0: SpaceTimeField, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                    damping=False, workers=1) -> StabilityReport:
    """Solve at each ``eps`` and compare with the linearized sensitivity.

    A failing ``eps`` is recorded (``converged=False``, NaN norms) rather than raised.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or len(eps) == 0 or np.any(eps <= 0) or np.any(np.diff(eps) <= 0):
        raise ValueError("epsilons must be a nonempty increasing list of positive numbers")
    p = base.p
    v = linearized_sensitivity(base, pert, u0)

    def one(e):
        try:
            phi, trace = solution_map(base, pert, e, u0, tol, max_iter, damping, with_trace=True)
        except (NewtonError, ArithmeticError) as exc:
            log.info("eps=%g failed: %s", e, exc)
            iters = exc.trace.iterations if isinstance(exc, NewtonError) else 0
            return np.nan, np.nan, False, iters, f"eps={e:g}: {exc}"
        d = phi - u0
        return w21p_norm(d, p), w21p_norm(d - e * v, p), True, trace.iterations, ""

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, eps))
    else:
        results = [one(e) for e in eps]
    dev, sens, conv, iters, msgs = zip(*results)
    return StabilityReport(eps, np.array(dev), np.array(sens), np.array(conv, dtype=bool), np.array(iters),
                           tuple(m for m in msgs if m))


@dataclass
class PersistenceReport:
    radii: np.ndarray
    base_modulus: np.ndarray
    perturbed_modulus: np.ndarray
    bound: np.ndarray
    slack: float
    L_a: float
    state_distance: float

    @property
    def difference(self):
        return np.abs(self.perturbed_modulus - self.base_modulus)

    @property
    def holds(self):
        return bool(np.all(self.difference <= self.bound + self.slack))


def vmo_persistence(base, pert, eps, u0: SpaceTimeField, phi: SpaceTimeField, radii, density=9,
                    slack_fraction=0.05) -> PersistenceReport:
    """Compare composed moduli of ``a`` along ``u0`` and of ``a + eps a~`` along ``Phi(eps)``.

    Per entry, ``|osc(g1) - osc(g2)| <= 2 sup |g1 - g2|``; with ``L_a`` the
    sampled Lipschitz constant of ``a`` in ``(u, xi)`` this gives the bound
    ``2 L_a ||Phi - u0||_{W^{1,inf}} + 2 eps sup |a~(Phi)|`` summed over entries.
    """
    grid = u0.grid
    pset = perturbed_set(base, pert, eps)
    radii = np.asarray(radii, dtype=float)
    base_mod = composed_vmo_modulus(base, u0, radii).modulus
    pert_mod = composed_vmo_modulus(pset, phi, radii).modulus
    M = max(w1inf_norm(u0), w1inf_norm(phi), 1e-12)
    box = CompactBox.ball(M, grid.dim, density)
    delta = w1inf_norm(phi - u0)
    bound, L_total, a_sup = 0.0, 0.0, 0.0
    c = abs(float(eps) * pert.magnitude)
    n = base.dim
    for i in range(n):
        for j in range(n):
            fn = base.a[i][j]
            L = lipschitz_estimate(fn, box, grid if fn.depends_on_xt else None, derivatives=False)
            tilde = float(np.max(np.abs(composed(pert.a_tilde[i][j], phi).values)))
            bound += 2 * L * delta + 2 * c * tilde
            L_total += L
            a_sup = max(a_sup, float(np.max(np.abs(composed(fn, u0).values))))
    return PersistenceReport(radii, base_mod, pert_mod, np.full(len(radii), bound), slack_fraction * a_sup,
                             L_total, delta)
