"""Mean oscillation in x over parabolic cylinders and VMO_x moduli.

The spatial double mean on a slice is computed from sorted values: for
values ``a_1 <= ... <= a_m`` with weights ``w``,

    sum_{y,z} w_y w_z |a_y - a_z| = 2 sum_j w_j sum_{i<j} w_i (a_j - a_i),

which is the pairwise sum in a different loop order.  The time mean uses
the overlap of each backward step with the window ``(t, t + r^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import report
from .calculus import SpaceTimeField, gradient, w1inf_norm, x_continuity_modulus
from .coeff import CoefficientFn, CoefficientSet, CompactBox, composed, u_modulus_table, xi_lipschitz
from .mesh import ball_offsets

KINDS = ("raw_coefficient", "composed", "gradient", "continuity")


@dataclass
class OscillationReport:
    radii: np.ndarray
    modulus: np.ndarray
    kind: str

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.modulus = np.asarray(self.modulus, dtype=float)
        if self.kind not in KINDS:
            raise ValueError(f"unknown report kind {self.kind!r}")
        if np.any(self.modulus < 0):
            raise ValueError("modulus values must be nonnegative")

    def __add__(self, other):
        if not np.array_equal(self.radii, other.radii):
            raise ValueError("reports sampled at different radii")
        return OscillationReport(self.radii, self.modulus + other.modulus, self.kind)

    def scaled(self, c):
        return OscillationReport(self.radii, abs(c) * self.modulus, self.kind)

    def rows(self):
        return [(float(r), float(m), self.kind) for r, m in zip(self.radii, self.modulus)]

    def to_csv(self, path):
        return report.write_csv(path, ["R", "modulus", "kind"], self.rows())

    def loglog_slope(self, count=None):
        """Least-squares slope of log modulus against log R over the first ``count`` radii."""
        r, m = self.radii[:count], self.modulus[:count]
        keep = m > 0
        if keep.sum() < 2:
            raise ValueError("need two positive modulus values to fit a slope")
        return float(np.polyfit(np.log(r[keep]), np.log(m[keep]), 1)[0])


def _values(sampled):
    return sampled.values if isinstance(sampled, SpaceTimeField) else np.asarray(sampled)


def pair_mean(values, weights, axis=-1):
    """Weighted ``mean_{y,z} |a_y - a_z|`` along ``axis`` (sorted-sum evaluation)."""
    a = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    w = np.broadcast_to(np.asarray(weights, dtype=float), a.shape)
    order = np.argsort(a, axis=-1, kind="stable")
    a = np.take_along_axis(a, order, axis=-1)
    w = np.take_along_axis(w, order, axis=-1)
    a = a - a[..., :1]
    wa = w * a
    before_w = np.cumsum(w, axis=-1) - w
    before_wa = np.cumsum(wa, axis=-1) - wa
    total = 2.0 * np.sum(w * (a * before_w - before_wa), axis=-1)
    W = np.sum(w, axis=-1)
    return total / (W * W)


def mean_osc_x(sampled, cylinder) -> float:
    """Discrete ``mean_{I_r} mean_{B_r} mean_{B_r} |a(y,tau) - a(z,tau)|`` on a cylinder."""
    if len(cylinder.space_nodes) == 0 or len(cylinder.time_steps) == 0:
        raise ValueError("empty cylinder")
    v = _values(sampled)
    idx = tuple(cylinder.space_nodes.T)
    slab = v[cylinder.time_steps][(slice(None),) + idx]
    per_slice = pair_mean(slab, cylinder.space_weights)
    tw = cylinder.time_weights
    return float(np.sum(tw * per_slice) / np.sum(tw))


def sample_radii(grid, R_max):
    """Radii ``m * h`` (``h`` the largest spacing) up to ``R_max``."""
    h = max(grid.spacing)
    count = int(np.floor(R_max / h * (1 + 1e-12)))
    return h * np.arange(1, count + 1)


def _window_means(grid, per_slice, r):
    """For every start node ``k0`` with ``t_k0 < T``: overlap-weighted mean of ``per_slice``.

    ``per_slice[..., k]`` holds the value on ``(t_{k-1}, t_k]``.
    """
    F = np.concatenate([np.zeros(per_slice.shape[:-1] + (1,)), np.cumsum(per_slice[..., 1:], axis=-1) * grid.dt],
                       axis=-1)
    t0 = grid.times[:-1]
    t1 = np.minimum(t0 + r * r, grid.horizon)
    # F is piecewise linear between time nodes
    pos = t1 / grid.dt
    k = np.minimum(np.floor(pos).astype(int), grid.steps - 2)
    frac = pos - k
    F1 = F[..., k] * (1 - frac) + F[..., k + 1] * frac
    F0 = F[..., :-1]
    return (F1 - F0) / (t1 - t0)


def _sup_at_radius(v, grid, r):
    offs = ball_offsets(grid, r)
    nodes = np.asarray(grid.nodes)
    best = 0.0
    for c in np.ndindex(*grid.nodes):
        idx = np.asarray(c) + offs
        idx = idx[np.all((idx >= 0) & (idx < nodes), axis=1)]
        slab = v[(slice(None),) + tuple(idx.T)]
        per_slice = pair_mean(slab, grid.space_weights[tuple(idx.T)])
        best = max(best, float(np.max(_window_means(grid, per_slice, r))))
    return best


def vmo_modulus(sampled: SpaceTimeField, radii, kind="raw_coefficient") -> OscillationReport:
    """``a^#(R) = sup_{centers} sup_{r <= R} osc_x(a, I_r)`` at each ``R`` in ``radii``.

    Centers range over grid nodes; the inner sup samples ``r`` at multiples
    of the grid spacing together with ``R`` itself.
    """
    grid = sampled.grid
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) == 0 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be a nonempty increasing list")
    h = max(grid.spacing)
    if radii[0] < h * (1 - 1e-12):
        raise ValueError(f"radius {radii[0]} is below the grid spacing {h}")
    v = _values(sampled)
    rs = np.union1d(sample_radii(grid, radii[-1]), radii)
    if np.all(v == v[(slice(None),) + (0,) * grid.dim][(...,) + (None,) * grid.dim]):
        per_r = np.zeros(len(rs))  # constant in x on every slice
    else:
        per_r = np.array([_sup_at_radius(v, grid, r) for r in rs])
    running = np.maximum.accumulate(per_r)
    modulus = running[np.searchsorted(rs, radii)]
    return OscillationReport(radii, modulus, kind)


def gradient_modulus(u: SpaceTimeField, radii) -> OscillationReport:
    """``Du^#(R) = sum_i (D_i u)^#(R)``."""
    parts = [vmo_modulus(d, radii) for d in gradient(u)]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return OscillationReport(total.radii, total.modulus, "gradient")


def continuity_report(u: SpaceTimeField, radii) -> OscillationReport:
    return OscillationReport(radii, [x_continuity_modulus(u, r) for r in radii], "continuity")


def composed_vmo_modulus(coeffs, u: SpaceTimeField, radii) -> OscillationReport:
    """Modulus of ``a(x, t, u, Du)``; for a :class:`CoefficientSet` the sum over all ``a^{ij}``."""
    fns = [e for row in coeffs.a for e in row] if isinstance(coeffs, CoefficientSet) else [coeffs]
    Du = gradient(u)
    total = None
    for fn in fns:
        rep = vmo_modulus(composed(fn, u, Du), radii)
        total = rep if total is None else total + rep
    return OscillationReport(total.radii, total.modulus, "composed")


def frozen_state_modulus(fn: CoefficientFn, grid, M, radii, density=5) -> OscillationReport:
    """``a^#_M(R)``: sup over a lattice of frozen states ``|u|, |xi_i| <= M`` of the raw modulus."""
    radii = np.asarray(radii, dtype=float)
    if not {"x1", "x2"} & fn.variables:
        return OscillationReport(radii, np.zeros(len(radii)), "raw_coefficient")
    axes = []
    for name in ["u"] + [f"xi{i + 1}" for i in range(grid.dim)]:
        axes.append(np.linspace(-M, M, density) if name in fn.variables else np.zeros(1))
    best = np.zeros(len(radii))
    for state in np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1):
        field = SpaceTimeField(grid, fn.evaluate(grid.coords[:-1], grid.coords[-1], state[0],
                                                 list(state[1:])))
        best = np.maximum(best, vmo_modulus(field, radii).modulus)
    return OscillationReport(radii, best, "raw_coefficient")


@dataclass
class LemmaBoundReport:
    radii: np.ndarray
    composed: np.ndarray
    frozen: np.ndarray
    mu_term: np.ndarray
    gradient_term: np.ndarray
    slack: float
    M: float
    C_K: float

    @property
    def bound(self):
        return self.frozen + self.mu_term + self.gradient_term

    @property
    def margins(self):
        return self.bound + self.slack - self.composed

    @property
    def holds(self):
        return bool(np.all(self.margins >= 0))

    def to_csv(self, path):
        rows = zip(self.radii, self.composed, self.frozen, self.mu_term, self.gradient_term, self.bound, self.margins)
        return report.write_csv(path, ["R", "composed", "frozen", "mu_term", "gradient_term", "bound", "margin"], rows)


def lemma1_bound_check(fn, u: SpaceTimeField, radii, density=9, frozen_density=5,
                       slack_fraction=0.05) -> LemmaBoundReport:
    """Compare the composed modulus with ``a#_M(R) + mu_K(omega_u(R)) + C_K Du#(R)`` per radius.

    ``M = ||u||_inf + ||Du||_inf`` and ``K = [-M, M]^{1+n}``; ``mu_K`` and
    ``C_K`` are sampled on a lattice of ``density`` points per axis.  The
    slack is ``slack_fraction * sup |a(x, t, u, Du)|``.  For a
    :class:`CoefficientSet` every term is summed over the entries ``a^{ij}``.
    """
    if isinstance(fn, CoefficientSet):
        parts = [lemma1_bound_check(e, u, radii, density, frozen_density, slack_fraction)
                 for row in fn.a for e in row]
        return LemmaBoundReport(parts[0].radii, *(sum(getattr(r, k) for r in parts)
                                                   for k in ("composed", "frozen", "mu_term", "gradient_term",
                                                             "slack")),
                                parts[0].M, max(r.C_K for r in parts))
    grid = u.grid
    radii = np.asarray(radii, dtype=float)
    M = w1inf_norm(u)
    box = CompactBox.ball(max(M, 1e-12), grid.dim, density)
    comp_field = composed(fn, u)
    comp = vmo_modulus(comp_field, radii).modulus
    frozen = frozen_state_modulus(fn, grid, M, radii, frozen_density).modulus
    omega = continuity_report(u, radii).modulus
    mu = u_modulus_table(fn, box, grid if fn.depends_on_xt else None)
    C_K = xi_lipschitz(fn, box, grid if fn.depends_on_xt else None)
    grad = gradient_modulus(u, radii).modulus
    slack = slack_fraction * float(np.max(np.abs(comp_field.values)))
    return LemmaBoundReport(radii, comp, frozen, np.asarray(mu(omega), dtype=float), C_K * grad, slack, M, C_K)
