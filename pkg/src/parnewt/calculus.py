"""Grid functions on Q, finite-difference jets and the discrete norms of
L^p(Q), W^{1,inf}_x(Q) and W^{2,1}_p(Q).

All integrals use trapezoidal weights.  Time derivatives are backward
differences, so the time-derivative part of the Sobolev norm integrates
steps ``k >= 1`` with weight ``dt`` each (each backward quotient stands for
the interval ``(t_{k-1}, t_k]``).
"""

from __future__ import annotations

import numpy as np

from . import report
from .mesh import Grid


class SpaceTimeField:
    """Node values of a scalar function on a :class:`Grid`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.size == grid.size and values.shape != grid.shape:
            values = values.reshape(grid.shape)
        if values.shape != grid.shape:
            raise ValueError(f"values of shape {values.shape} do not fit grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(*x, t)`` at every node."""
        return cls(grid, np.broadcast_to(fn(*grid.coords), grid.shape).copy())

    def _coerce(self, other):
        if isinstance(other, SpaceTimeField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return SpaceTimeField(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return SpaceTimeField(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return SpaceTimeField(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return SpaceTimeField(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return SpaceTimeField(self.grid, self.values / self._coerce(other))

    def __neg__(self):
        return SpaceTimeField(self.grid, -self.values)

    def __repr__(self):
        return f"SpaceTimeField(shape={self.values.shape})"

    def boundary_max(self) -> float:
        """Largest ``|u|`` over the parabolic boundary."""
        return float(np.max(np.abs(self.values[~self.grid.interior]), initial=0.0))

    def to_csv(self, path, name="value", **extra):
        write_fields_csv(path, {name: self, **extra})


def write_fields_csv(path, fields: dict):
    """Write node coordinates followed by one column per field."""
    grids = {f.grid for f in fields.values()}
    if len(grids) != 1:
        raise ValueError("all fields must share a grid")
    grid = grids.pop()
    header = [f"x{i + 1}" for i in range(grid.dim)] + ["t"] + list(fields)
    cols = [c.ravel() for c in grid.coords] + [f.values.ravel() for f in fields.values()]
    return report.write_csv(path, header, zip(*cols))


def read_field_csv(path, grid: Grid, name="value") -> SpaceTimeField:
    header, rows = report.read_csv(path)
    col = header.index(name)
    return SpaceTimeField(grid, np.array([float(r[col]) for r in rows]))


def _check_axis(grid, axis):
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for a {grid.dim}D grid")


def _dx(values, h, axis):
    return np.gradient(values, h, axis=axis, edge_order=2)


def _dxx(values, h, axis):
    out = np.empty_like(values)
    v = np.moveaxis(values, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    if v.shape[0] >= 4:
        o[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
        o[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    else:
        o[0] = o[1]
        o[-1] = o[-2]
    return out


def diff_x(field: SpaceTimeField, axis: int) -> SpaceTimeField:
    """First derivative in ``x_{axis+1}``: central inside, second-order one-sided at the walls."""
    _check_axis(field.grid, axis)
    return SpaceTimeField(field.grid, _dx(field.values, field.grid.spacing[axis], axis + 1))


def diff_xx(field: SpaceTimeField, i: int, j: int) -> SpaceTimeField:
    """Second derivative ``D_ij``.

    For ``i != j`` this composes two first differences, which at interior
    nodes is the 4-point cross stencil.
    """
    grid = field.grid
    _check_axis(grid, i)
    _check_axis(grid, j)
    if i == j:
        return SpaceTimeField(grid, _dxx(field.values, grid.spacing[i], i + 1))
    inner = _dx(field.values, grid.spacing[i], i + 1)
    return SpaceTimeField(grid, _dx(inner, grid.spacing[j], j + 1))


def diff_t(field: SpaceTimeField) -> SpaceTimeField:
    """Backward difference in t; the t=0 slice gets the forward difference."""
    v = field.values
    out = np.empty_like(v)
    out[1:] = (v[1:] - v[:-1]) / field.grid.dt
    out[0] = out[1]
    return SpaceTimeField(field.grid, out)


def gradient(field):
    """List of ``D_i u``."""
    return [diff_x(field, a) for a in range(field.grid.dim)]


def hessian(field):
    """Nested list ``[[D_ij u]]`` (symmetric; off-diagonals computed once)."""
    n = field.grid.dim
    H = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            H[i][j] = H[j][i] = diff_xx(field, i, j)
    return H


def _pointwise_norm(parts):
    return np.sqrt(sum(p.values**2 for p in parts))


def _check_p(p, strict=False):
    if not np.isfinite(p) or p < 1 or (strict and p <= 1):
        raise ValueError(f"invalid integrability exponent p={p}")


def _weighted_lp(values, weights, p):
    return float(np.sum(weights * np.abs(values) ** p) ** (1.0 / p))


def lp_norm(field: SpaceTimeField, p: float) -> float:
    _check_p(p)
    return _weighted_lp(field.values, field.grid.weights, p)


def sup_norm(field: SpaceTimeField) -> float:
    return float(np.max(np.abs(field.values)))


def w1inf_norm(field: SpaceTimeField) -> float:
    """``||u||_inf + ||Du||_inf`` with ``|Du|`` the Euclidean length."""
    return sup_norm(field) + float(np.max(_pointwise_norm(gradient(field))))


def w21p_parts(field: SpaceTimeField, p: float) -> dict:
    """The four summands of the W^{2,1}_p norm, keyed u, Du, D2u, Dtu."""
    _check_p(p, strict=True)
    grid = field.grid
    H = hessian(field)
    tw = np.full(grid.steps, grid.dt)
    tw[0] = 0.0
    return {
        "u": lp_norm(field, p),
        "Du": _weighted_lp(_pointwise_norm(gradient(field)), grid.weights, p),
        "D2u": _weighted_lp(_pointwise_norm([h for row in H for h in row]), grid.weights, p),
        "Dtu": _weighted_lp(diff_t(field).values, np.multiply.outer(tw, grid.space_weights), p),
    }


def w21p_norm(field: SpaceTimeField, p: float) -> float:
    return float(sum(w21p_parts(field, p).values()))


def _offset_pairs(grid, r):
    """Nonzero integer offsets with ``|d h| < r``, one per +/- pair."""
    reach = [int(np.ceil(r / h)) for h in grid.spacing]
    ranges = [np.arange(-q, q + 1) for q in reach]
    offs = np.stack([g.ravel() for g in np.meshgrid(*ranges, indexing="ij")], axis=1)
    d2 = np.sum((offs * np.asarray(grid.spacing)) ** 2, axis=1)
    keep = (d2 < (r * (1 - 1e-12)) ** 2) & (d2 > 0)
    offs = offs[keep]
    # keep the lexicographically positive representative
    first = np.array([o[np.nonzero(o)[0][0]] > 0 for o in offs], dtype=bool) if len(offs) else offs
    return offs[first] if len(offs) else offs


def _shift_pair(values, d):
    """Views ``(u[i], u[i + d])`` over every spatial index where both exist."""
    a, b = [slice(None)], [slice(None)]
    for s in d:
        s = int(s)
        if s >= 0:
            a.append(slice(0, values.shape[len(a)] - s))
            b.append(slice(s, None))
        else:
            a.append(slice(-s, None))
            b.append(slice(0, values.shape[len(b)] + s))
    return values[tuple(a)], values[tuple(b)]


def x_continuity_modulus(field: SpaceTimeField, r: float) -> float:
    """``sup_t sup_{|y - z| < r} |u(y, t) - u(z, t)|`` over node pairs."""
    grid = field.grid
    if r < min(grid.spacing) * (1 - 1e-12):
        raise ValueError(f"radius {r} is below the grid spacing")
    best = 0.0
    for d in _offset_pairs(grid, r):
        lo, hi = _shift_pair(field.values, d)
        if lo.size:
            best = max(best, float(np.max(np.abs(hi - lo))))
    return best


def default_holder_exponent(dim: int, p: float) -> float:
    return 1.0 - (dim + 2) / p


def holder_quotient(field: SpaceTimeField, alpha: float) -> float:
    """``max_{s != s'} ||u(., s) - u(., s')||_{C^1} / |s - s'|^{alpha/2}``."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    grid = field.grid
    u = field.values
    g = np.stack([_dx(u, h, a + 1) for a, h in enumerate(grid.spacing)], axis=-1)
    axes = tuple(range(1, grid.dim + 1))
    best = 0.0
    for k in range(grid.steps - 1):
        du = np.max(np.abs(u[k + 1:] - u[k]), axis=axes)
        dg = np.max(np.sqrt(np.sum((g[k + 1:] - g[k]) ** 2, axis=-1)), axis=axes)
        gap = grid.times[k + 1:] - grid.times[k]
        best = max(best, float(np.max((du + dg) / gap ** (alpha / 2))))
    return best
