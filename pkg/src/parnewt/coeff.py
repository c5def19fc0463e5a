"""Carathéodory coefficient data a^{ij}(x,t,u,xi), f(x,t,u,xi) and the
numerical hypothesis checks built on them.

Every sup-type quantity here is a sampled lower bound: it is a maximum
over a finite lattice in (u, xi) and over the grid nodes in (x, t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import qmc

from . import expr as ex
from .calculus import SpaceTimeField, gradient

STATE_VARS = ("u", "xi1", "xi2")


class HypothesisError(ValueError):
    """Input data violate one of the standing hypotheses (H1)-(H4)."""

    def __init__(self, hypothesis, message):
        self.hypothesis = hypothesis
        super().__init__(f"{hypothesis}: {message}")


class EllipticityError(ArithmeticError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message)


class CoefficientFn:
    """A parsed coefficient with symbolic partials in ``u`` and ``xi_l``."""

    def __init__(self, source):
        if isinstance(source, CoefficientFn):
            source = source.tree
        self.tree = ex.parse(source) if isinstance(source, str) else source
        self.text = source if isinstance(source, str) else ex.to_text(self.tree)
        self.variables = ex.variables(self.tree)

    @classmethod
    def constant(cls, value):
        return cls(ex.Num(float(value)))

    def __repr__(self):
        return f"CoefficientFn({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, CoefficientFn) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    @cached_property
    def _partials(self):
        return {v: ex.diff(self.tree, v) for v in STATE_VARS}

    def partial_tree(self, var):
        if var in self._partials:
            return self._partials[var]
        return ex.diff(self.tree, var)

    def derivative(self, var) -> "CoefficientFn":
        """Symbolic partial derivative as a new coefficient."""
        return CoefficientFn(self.partial_tree(var))

    @property
    def depends_on_state(self):
        return bool(self.variables & set(STATE_VARS))

    @property
    def depends_on_xt(self):
        return bool(self.variables & {"x1", "x2", "t"})

    @staticmethod
    def _env(x, t, u, xi):
        env = {"t": t, "u": u}
        for i, xv in enumerate(x):
            env[f"x{i + 1}"] = xv
        for i, xv in enumerate(xi):
            env[f"xi{i + 1}"] = xv
        return env

    @staticmethod
    def _shape(x, t, u, xi):
        return np.broadcast_shapes(*(np.shape(v) for v in (*x, t, u, *xi)))

    def _run(self, tree, env, shape):
        try:
            val = ex.evaluate(tree, env)
        except ex.DomainError as err:
            raise ex.DomainError(
                f"{err} (while evaluating {self.text!r})", err.expression, err.index
            ) from None
        val = np.broadcast_to(np.asarray(val, dtype=float), shape)
        bad = ~np.isfinite(val)
        if np.any(bad):
            raise ex.DomainError(
                f"non-finite value of {ex.to_text(tree)!r}", ex.to_text(tree), int(np.flatnonzero(bad.ravel())[0])
            )
        return val

    def evaluate(self, x, t, u, xi):
        """Value at the point(s) ``(x, t, u, xi)``; ``x`` and ``xi`` are sequences."""
        x, xi = tuple(x), tuple(xi)
        return self._run(self.tree, self._env(x, t, u, xi), self._shape(x, t, u, xi))

    __call__ = evaluate

    def partials(self, x, t, u, xi):
        """``(a_u, [D_{xi_l} a])`` at the point(s)."""
        x, xi = tuple(x), tuple(xi)
        env, shape = self._env(x, t, u, xi), self._shape(x, t, u, xi)
        a_u = self._run(self._partials["u"], env, shape)
        d_xi = [self._run(self._partials[f"xi{l + 1}"], env, shape) for l in range(len(xi))]
        return a_u, d_xi


def as_fn(obj) -> CoefficientFn:
    if isinstance(obj, CoefficientFn):
        return obj
    if isinstance(obj, (int, float)):
        return CoefficientFn.constant(obj)
    return CoefficientFn(obj)


@dataclass
class CoefficientSet:
    """Principal matrix ``a``, source ``f``, ellipticity constant and exponent.

    ``source`` is an optional node-sampled additive term of ``f`` (used by
    manufactured problems); it binds the set to that field's grid.
    """

    a: tuple
    f: CoefficientFn
    lam: float
    p: float
    source: SpaceTimeField | None = field(default=None, repr=False)

    def __post_init__(self):
        a = self.a
        if isinstance(a, (str, int, float, CoefficientFn)):
            a = [[a]]
        self.a = tuple(tuple(as_fn(e) for e in row) for row in a)
        self.f = as_fn(self.f)
        n = len(self.a)
        if n not in (1, 2) or any(len(row) != n for row in self.a):
            raise ValueError("a must be a square 1x1 or 2x2 table")
        allowed = {"t", "u"} | {f"x{i + 1}" for i in range(n)} | {f"xi{i + 1}" for i in range(n)}
        for fn in [e for row in self.a for e in row] + [self.f]:
            extra = fn.variables - allowed
            if extra:
                raise ex.UnknownIdentifierError(f"{sorted(extra)} not defined in dimension {n} ({fn.text!r})")
        if not np.isfinite(self.lam) or self.lam <= 0:
            raise HypothesisError("H3", f"ellipticity constant must be positive, got lambda={self.lam}")
        if not self.p > n + 2:
            raise HypothesisError("H4", f"p={self.p:g} but n={n} requires p>{n + 2}")

    @property
    def dim(self):
        return len(self.a)

    def is_symmetric(self):
        """Symmetric as expressions (identical trees)."""
        n = self.dim
        return all(self.a[i][j] == self.a[j][i] for i in range(n) for j in range(i + 1, n))

    def replace(self, **changes):
        kw = dict(a=self.a, f=self.f, lam=self.lam, p=self.p, source=self.source)
        kw.update(changes)
        return CoefficientSet(**kw)

    def source_values(self, grid):
        if self.source is None:
            return 0.0
        if self.source.grid != grid:
            raise ValueError("the manufactured source lives on a different grid")
        return self.source.values

    def is_affine(self):
        """True when the problem is linear in u: a free of (u, xi) and f affine in them."""
        if any(e.depends_on_state for row in self.a for e in row):
            return False
        return not any(self.f.partial_tree(v) != ex.ZERO and ex.variables(self.f.partial_tree(v)) & set(STATE_VARS)
                       for v in STATE_VARS)


def matrix_along(cset: CoefficientSet, u: SpaceTimeField, Du=None):
    """``a^{ij}(x, t, u, Du)`` at every node, shape ``grid.shape + (n, n)``."""
    grid = u.grid
    Du = gradient(u) if Du is None else Du
    xi = [d.values for d in Du]
    n = cset.dim
    A = np.empty(grid.shape + (n, n))
    for i in range(n):
        for j in range(n):
            A[..., i, j] = cset.a[i][j].evaluate(grid.coords[:-1], grid.coords[-1], u.values, xi)
    return A


# ---------------------------------------------------------------- ellipticity


@dataclass
class EllipticityReport:
    passed: bool
    symmetric: bool
    symmetry_defect: float
    lower_margin: float
    upper_margin: float
    worst_node: tuple | None
    worst_direction: tuple | None
    directions: int

    def describe(self):
        if self.passed:
            return (f"ellipticity holds: margins {self.lower_margin:.3g} (lower), "
                    f"{self.upper_margin:.3g} (upper)")
        if not self.symmetric:
            return f"symmetry fails: max |a^ij - a^ji| = {self.symmetry_defect:.3g}"
        return (f"ellipticity fails at node {self.worst_node} along eta={self.worst_direction}: "
                f"margins {self.lower_margin:.3g} (lower), {self.upper_margin:.3g} (upper)")


def sample_directions(dim, count=16, seed=0):
    """Axis unit vectors followed by scrambled-Sobol unit vectors."""
    dirs = [np.eye(dim)[i] for i in range(dim)]
    if dim > 1 and count > 0:
        m = int(np.ceil(np.log2(max(count, 2))))
        pts = qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)[:count]
        if dim == 2:
            ang = np.pi * pts[:, 0]
            extra = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        else:  # pragma: no cover - dim is 1 or 2
            g = qmc.MultivariateNormalQMC(np.zeros(dim), seed=seed).random(count)
            extra = g / np.linalg.norm(g, axis=1, keepdims=True)
        dirs.extend(extra)
    return np.array(dirs)


def check_ellipticity(cset: CoefficientSet, u0: SpaceTimeField, directions=None, seed=0, n_directions=16,
                      rtol=1e-12) -> EllipticityReport:
    """Check ``lam^-1 |eta|^2 <= a(x,t,u0,Du0) eta.eta <= lam |eta|^2`` and symmetry at every node."""
    A = matrix_along(cset, u0)
    n = cset.dim
    eta = sample_directions(n, n_directions, seed) if directions is None else np.atleast_2d(directions)
    norm2 = np.sum(eta**2, axis=1)
    q = np.einsum("di,...ij,dj->...d", eta, A, eta)
    lam = cset.lam
    low = q - norm2 / lam
    up = lam * norm2 - q
    asym = float(np.max(np.abs(A - np.swapaxes(A, -1, -2)))) if n > 1 else 0.0
    tol = rtol * max(lam, 1.0)
    symmetric = asym <= tol
    worst = np.minimum(low, up)
    flat = int(np.argmin(worst))
    node_idx = np.unravel_index(flat, worst.shape)
    passed = symmetric and float(worst.min()) >= -tol
    return EllipticityReport(
        passed=bool(passed),
        symmetric=bool(symmetric),
        symmetry_defect=asym,
        lower_margin=float(low.min()),
        upper_margin=float(up.min()),
        worst_node=None if passed else tuple(int(i) for i in node_idx[:-1]),
        worst_direction=None if passed else tuple(float(v) for v in eta[node_idx[-1]]),
        directions=len(eta),
    )


def require_ellipticity(cset, u0, **kw):
    rep = check_ellipticity(cset, u0, **kw)
    if not rep.passed:
        raise EllipticityError(f"H3: {rep.describe()}", rep.worst_node)
    return rep


# ---------------------------------------------------------------- sampled sup quantities


@dataclass(frozen=True)
class CompactBox:
    """Box ``[u_min, u_max] x prod [xi_min, xi_max]`` sampled on a lattice."""

    u_range: tuple
    xi_ranges: tuple
    sample_density: int = 9

    def __post_init__(self):
        ranges = (tuple(self.u_range),) + tuple(tuple(r) for r in self.xi_ranges)
        for lo, hi in ranges:
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"interval [{lo}, {hi}] is empty or unbounded")
        if self.sample_density < 2:
            raise ValueError("sample_density must be at least 2")
        object.__setattr__(self, "u_range", tuple(map(float, self.u_range)))
        object.__setattr__(self, "xi_ranges", tuple(tuple(map(float, r)) for r in self.xi_ranges))

    @classmethod
    def ball(cls, M, dim, sample_density=9):
        return cls((-M, M), ((-M, M),) * dim, sample_density)

    @property
    def dim(self):
        return len(self.xi_ranges)

    def axis_points(self):
        return [np.linspace(lo, hi, self.sample_density if hi > lo else 1)
                for lo, hi in (self.u_range,) + self.xi_ranges]

    def lattice(self):
        """Array of lattice points, shape ``(m, 1 + dim)``."""
        mesh = np.meshgrid(*self.axis_points(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, other: "CompactBox"):
        pairs = zip((self.u_range,) + self.xi_ranges, (other.u_range,) + other.xi_ranges)
        return all(lo <= olo and ohi <= hi for (lo, hi), (olo, ohi) in pairs)


def _xt_points(fn, grid, dim):
    """Sample points in (x, t): the grid nodes, or a single point for (x, t)-free data."""
    if grid is None:
        if fn.depends_on_xt:
            raise ValueError(f"{fn.text!r} depends on (x, t); pass a grid")
        return tuple(np.zeros(1) for _ in range(dim)), np.zeros(1)
    return tuple(c.ravel() for c in grid.coords[:-1]), grid.coords[-1].ravel()


def _jet_table(fn, box, grid, derivatives=True):
    """For every lattice point: value (and partials) at all (x,t) samples.

    Returns ``(points, V)`` with ``V`` of shape ``(m, k, n_xt)`` where ``k``
    is 1 (value only) or ``2 + dim``.
    """
    dim = box.dim
    x, t = _xt_points(fn, grid, dim)
    pts = box.lattice()
    rows = []
    for pt in pts:
        u = np.full(t.shape, pt[0])
        xi = [np.full(t.shape, v) for v in pt[1:]]
        val = fn.evaluate(x, t, u, xi)
        if derivatives:
            a_u, d_xi = fn.partials(x, t, u, xi)
            rows.append(np.stack([val, a_u, *d_xi]))
        else:
            rows.append(val[None])
    return pts, np.array(rows)


def c1_norm(fn: CoefficientFn, box: CompactBox, grid=None) -> float:
    """``sup_K ( ||a||_inf + ||a_u||_inf + sum_l ||D_xi_l a||_inf )`` with the L^inf norms over Q."""
    _, V = _jet_table(fn, box, grid)
    per_point = np.sum(np.max(np.abs(V), axis=2), axis=1)
    return float(np.max(per_point))


def _pairwise_sup(V, i):
    """``sup_Q |V[i] - V[j]|`` summed over components, for all j."""
    return np.sum(np.max(np.abs(V[i][None] - V), axis=2), axis=1)


def lipschitz_estimate(fn: CoefficientFn, box: CompactBox, grid=None, derivatives=True) -> float:
    """Largest sampled difference quotient of the local Lipschitz condition.

    The numerator sums the L^inf(Q) differences of ``a``, ``a_u`` and every
    ``D_xi_l a`` (only ``a`` itself with ``derivatives=False``); the
    denominator is ``|u - u'| + |xi - xi'|``.
    """
    pts, V = _jet_table(fn, box, grid, derivatives)
    best = 0.0
    for i in range(len(pts)):
        dist = np.abs(pts[i, 0] - pts[:, 0]) + np.linalg.norm(pts[i, 1:] - pts[:, 1:], axis=1)
        num = _pairwise_sup(V, i)
        ok = dist > 0
        if np.any(ok):
            best = max(best, float(np.max(num[ok] / dist[ok])))
    return best


def xi_lipschitz(fn: CoefficientFn, box: CompactBox, grid=None) -> float:
    """Sampled ``C_K`` with ``|a(u,xi) - a(u,xi')| <= C_K sum_i |xi_i - xi'_i|``."""
    pts, V = _jet_table(fn, box, grid, derivatives=False)
    best = 0.0
    for i in range(len(pts)):
        same_u = pts[:, 0] == pts[i, 0]
        dist = np.sum(np.abs(pts[i, 1:] - pts[:, 1:]), axis=1)
        ok = same_u & (dist > 0)
        if np.any(ok):
            best = max(best, float(np.max(_pairwise_sup(V, i)[ok] / dist[ok])))
    return best


@dataclass(frozen=True)
class ModulusTable:
    """Nondecreasing step function ``eta -> mu(eta)`` sampled at lattice gaps."""

    gaps: np.ndarray
    values: np.ndarray

    def __call__(self, eta):
        eta = np.asarray(eta, dtype=float)
        idx = np.searchsorted(self.gaps, eta * (1 - 1e-12), side="left")
        out = np.where(idx < len(self.gaps), self.values[np.minimum(idx, len(self.gaps) - 1)], np.inf)
        return np.where(eta <= 0, 0.0, out)


def u_modulus_table(fn: CoefficientFn, box: CompactBox, grid=None) -> ModulusTable:
    """Sampled modulus of continuity in ``u`` at fixed ``xi``: ``mu(eta) = sup |a(u) - a(u')|``
    over lattice pairs with ``|u - u'| <= eta``; evaluated at ``eta`` it returns the entry for the
    smallest lattice gap at least ``eta``."""
    pts, V = _jet_table(fn, box, grid, derivatives=False)
    us = box.axis_points()[0]
    if len(us) < 2:
        return ModulusTable(np.array([0.0]), np.array([0.0]))
    du = us[1] - us[0]
    # V is ordered with u as the slowest lattice axis
    V = V.reshape(len(us), -1, V.shape[-1])
    vals = []
    for m in range(1, len(us)):
        vals.append(float(np.max(np.abs(V[m:] - V[:-m]))))
    vals = np.maximum.accumulate(np.array(vals))
    return ModulusTable(du * np.arange(1, len(us)), vals)


def source_sup_at_zero(cset: CoefficientSet, grid) -> float:
    """``sup_Q |a^{ij}(x,t,0,0)|`` over all entries (the L^inf condition on a at the zero state)."""
    zero = np.zeros(grid.shape)
    xi = [zero] * cset.dim
    return float(max(np.max(np.abs(e.evaluate(grid.coords[:-1], grid.coords[-1], zero, xi)))
                     for row in cset.a for e in row))


def composed(fn: CoefficientFn, u: SpaceTimeField, Du=None) -> SpaceTimeField:
    """Node samples of ``fn(x, t, u(x,t), Du(x,t))``."""
    grid = u.grid
    Du = gradient(u) if Du is None else Du
    return SpaceTimeField(grid, fn.evaluate(grid.coords[:-1], grid.coords[-1], u.values, [d.values for d in Du]))
