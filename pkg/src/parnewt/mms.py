"""Manufactured solutions and grid-refinement studies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from . import report
from .calculus import SpaceTimeField, lp_norm, w1inf_norm, w21p_norm
from .coeff import CoefficientFn, CoefficientSet
from .mesh import Grid, build_grid
from .newton import DEFAULT_MAX_ITER, DEFAULT_TOL, NewtonError, newton_solve

BOUNDARY_TOL = 1e-14
_NONSMOOTH = {"abs", "sign", "min", "max", "ifle"}


def _calls(node):
    if isinstance(node, ex.Call):
        yield node.name
        for a in node.args:
            yield from _calls(a)
    elif isinstance(node, ex.Neg):
        yield from _calls(node.arg)
    elif isinstance(node, ex.Bin):
        yield from _calls(node.left)
        yield from _calls(node.right)
    elif isinstance(node, ex.Pow):
        yield from _calls(node.base)


def _env(grid: Grid):
    env = {f"x{i + 1}": grid.coords[i] for i in range(grid.dim)}
    env["t"] = grid.coords[-1]
    return env


def _sample(tree, grid):
    return np.broadcast_to(np.asarray(ex.evaluate(tree, _env(grid)), dtype=float), grid.shape).copy()


@dataclass
class ManufacturedProblem:
    """``u_exact`` with the node-sampled source making it an exact solution of the PDE."""

    u_exact: CoefficientFn
    base: CoefficientSet
    grid: Grid
    source: SpaceTimeField = field(repr=False)
    exact: SpaceTimeField = field(repr=False)
    exact_gradient: list = field(repr=False)

    @property
    def problem(self) -> CoefficientSet:
        return self.base.replace(source=self.source)

    def errors(self, u: SpaceTimeField) -> dict:
        diff = u - self.exact
        return {"err_lp": lp_norm(diff, self.base.p), "err_w1inf": w1inf_norm(diff),
                "err_w21p": w21p_norm(diff, self.base.p)}


def manufacture(u_exact, base: CoefficientSet, grid: Grid) -> ManufacturedProblem:
    """Source ``g`` so that ``u_exact`` solves ``D_t u - a^{ij} D_ij u = f + g`` at every node.

    The x- and t-derivatives of ``u_exact`` are symbolic.  ``base.source`` is
    ignored (it is replaced by the manufactured one).
    """
    fn = CoefficientFn(u_exact)
    allowed = {"t"} | {f"x{i + 1}" for i in range(grid.dim)}
    if fn.variables - allowed:
        raise ValueError(f"u_exact may only use {sorted(allowed)}, got {sorted(fn.variables)}")
    if base.dim != grid.dim:
        raise ValueError(f"coefficient set is {base.dim}D but the grid is {grid.dim}D")
    rough = _NONSMOOTH & set(_calls(fn.tree))
    if rough:
        raise ValueError(f"u_exact uses non-differentiable functions {sorted(rough)}")
    u = _sample(fn.tree, grid)
    worst = float(np.max(np.abs(u[~grid.interior]), initial=0.0))
    if worst > BOUNDARY_TOL:
        raise ValueError(f"u_exact does not vanish on the parabolic boundary (max |u| = {worst:.3g})")
    u[~grid.interior] = 0.0
    n = grid.dim
    xs = [f"x{i + 1}" for i in range(n)]
    grads = [ex.diff(fn.tree, x) for x in xs]
    Du = [_sample(g, grid) for g in grads]
    D2 = [[_sample(ex.diff(grads[i], xs[j]), grid) for j in range(n)] for i in range(n)]
    Dt = _sample(ex.diff(fn.tree, "t"), grid)
    x, t = grid.coords[:-1], grid.coords[-1]
    g = Dt - base.f.evaluate(x, t, u, Du)
    for i in range(n):
        for j in range(n):
            g = g - base.a[i][j].evaluate(x, t, u, Du) * D2[i][j]
    source = SpaceTimeField(grid, np.where(grid.interior, g, 0.0))
    exact = SpaceTimeField(grid, u)
    grad_fields = [SpaceTimeField(grid, d) for d in Du]
    return ManufacturedProblem(fn, base.replace(source=None), grid, source, exact, grad_fields)


def refinement_grids(dim, nodes0, steps0, levels=3, mode="h2", extent=1.0, horizon=1.0):
    """Grids halving ``h`` each level with ``dt`` scaled by 1/4 (``mode='h2'``) or 1/2 (``mode='h'``)."""
    if mode not in ("h2", "h"):
        raise ValueError("mode must be 'h2' or 'h'")
    if levels < 1:
        raise ValueError("need at least one level")
    out = []
    for k in range(levels):
        nodes = (nodes0 - 1) * 2**k + 1
        steps = (steps0 - 1) * (4 if mode == "h2" else 2) ** k + 1
        out.append(build_grid(dim, [extent] * dim, [nodes] * dim, horizon, steps))
    return out


@dataclass
class ConvergenceTable:
    h: np.ndarray
    dt: np.ndarray
    err_lp: np.ndarray
    err_w1inf: np.ndarray
    err_w21p: np.ndarray

    def order(self, column="err_lp"):
        """Least-squares slope of log error against log h."""
        e = np.asarray(getattr(self, column), dtype=float)
        if len(e) < 2 or np.any(e <= 0):
            raise ValueError("need two or more positive errors to fit an order")
        return float(np.polyfit(np.log(self.h), np.log(e), 1)[0])

    @property
    def orders(self):
        return {c: self.order(c) for c in ("err_lp", "err_w1inf", "err_w21p")}

    def rows(self):
        return list(zip(self.h, self.dt, self.err_lp, self.err_w1inf, self.err_w21p))

    def to_csv(self, path):
        o = self.orders
        footer = ("order", "", o["err_lp"], o["err_w1inf"], o["err_w21p"])
        return report.write_csv(path, ["grid_h", "dt", "err_lp", "err_w1inf", "err_w21p"], self.rows(), footer)


class StudyError(RuntimeError):
    def __init__(self, message, grid):
        self.grid = grid
        super().__init__(message)


def convergence_study(u_exact, base: CoefficientSet, grids, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                      damping=False) -> ConvergenceTable:
    """Solve the manufactured problem on each grid from ``u = 0`` and tabulate errors."""
    if len(grids) < 3:
        raise ValueError("a convergence study needs at least 3 grids")
    cols = {k: [] for k in ("h", "dt", "err_lp", "err_w1inf", "err_w21p")}
    for grid in grids:
        mp = manufacture(u_exact, base, grid)
        try:
            u, _ = newton_solve(mp.problem, SpaceTimeField.zeros(grid), tol=tol, max_iter=max_iter,
                                damping=damping)
        except NewtonError as exc:
            raise StudyError(f"grid with h={max(grid.spacing):g}, dt={grid.dt:g}: {exc}", grid) from exc
        cols["h"].append(max(grid.spacing))
        cols["dt"].append(grid.dt)
        for k, v in mp.errors(u).items():
            cols[k].append(v)
    return ConvergenceTable(**{k: np.asarray(v) for k, v in cols.items()})
