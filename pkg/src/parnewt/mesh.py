"""Uniform space-time grids on Q = Omega x (0, T) and parabolic cylinders.

Node values are stored time-major: an array of shape ``(n_t, n_1[, n_2])``.
Omega is the box ``[0, L_1] x ... x [0, L_n]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

INTERIOR = 0
LATERAL = 1
INITIAL = 2

FLAG_NAMES = {INTERIOR: "interior", LATERAL: "lateral", INITIAL: "initial"}

# relative slack when testing |y - x| <= r on a lattice
_BALL_RTOL = 1e-12


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on the cylinder ``[0, L]^n x [0, T]``."""

    dim: int
    extents: tuple
    nodes: tuple
    horizon: float
    steps: int

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(float(v) for v in self.extents))
        object.__setattr__(self, "nodes", tuple(int(v) for v in self.nodes))

    @property
    def spacing(self) -> tuple:
        return tuple(L / (n - 1) for L, n in zip(self.extents, self.nodes))

    @property
    def dt(self) -> float:
        return self.horizon / (self.steps - 1)

    @property
    def shape(self) -> tuple:
        return (self.steps,) + self.nodes

    @property
    def space_shape(self) -> tuple:
        return self.nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def axes(self) -> tuple:
        """1D coordinate arrays of each spatial axis."""
        return tuple(_readonly(np.linspace(0.0, L, n)) for L, n in zip(self.extents, self.nodes))

    @cached_property
    def times(self) -> np.ndarray:
        return _readonly(np.linspace(0.0, self.horizon, self.steps))

    @cached_property
    def coords(self) -> tuple:
        """Broadcastable node coordinates ``(x_1, ..., x_n, t)``, each of shape ``self.shape``."""
        mesh = np.meshgrid(self.times, *self.axes, indexing="ij")
        return tuple(_readonly(m) for m in mesh[1:]) + (_readonly(mesh[0]),)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.full(self.shape, INTERIOR, dtype=np.int8)
        for axis in range(self.dim):
            sl = [slice(None)] * (self.dim + 1)
            sl[axis + 1] = 0
            mask[tuple(sl)] = LATERAL
            sl[axis + 1] = -1
            mask[tuple(sl)] = LATERAL
        mask[0] = INITIAL
        return _readonly(mask)

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of nodes off the parabolic boundary."""
        return _readonly(self.boundary_mask == INTERIOR)

    @cached_property
    def space_interior(self) -> np.ndarray:
        """Boolean mask of spatial nodes off the lateral boundary (shape ``nodes``)."""
        return _readonly(self.boundary_mask[-1] == INTERIOR)

    @cached_property
    def space_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on Omega (shape ``nodes``)."""
        w = np.ones(())
        for h, n in zip(self.spacing, self.nodes):
            wi = np.full(n, h)
            wi[0] = wi[-1] = h / 2
            w = np.multiply.outer(w, wi)
        return _readonly(w)

    @cached_property
    def time_weights(self) -> np.ndarray:
        w = np.full(self.steps, self.dt)
        w[0] = w[-1] = self.dt / 2
        return _readonly(w)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on Q (shape ``self.shape``)."""
        return _readonly(np.multiply.outer(self.time_weights, self.space_weights))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents)) * self.horizon

    def nearest_node(self, x: Sequence[float], t: float) -> tuple:
        """Index ``(i_1, ..., i_n, k)`` of the node closest to ``(x, t)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = [int(np.clip(round(xi / h), 0, n - 1)) for xi, h, n in zip(x, self.spacing, self.nodes)]
        k = int(np.clip(round(t / self.dt), 0, self.steps - 1))
        return tuple(idx) + (k,)

    def with_horizon(self, horizon: float) -> "Grid":
        """Grid on the truncated cylinder ``Omega x (0, horizon)`` with the same dt."""
        steps = int(round(horizon / self.dt)) + 1
        return build_grid(self.dim, self.extents, self.nodes, (steps - 1) * self.dt, steps)


def build_grid(dim, extents, nodes, horizon, steps) -> Grid:
    """Validate parameters and build a :class:`Grid`.

    ``extents`` and ``nodes`` may be scalars, in which case they are
    repeated along every axis.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    extents = tuple(np.broadcast_to(np.asarray(extents, dtype=float), (dim,)))
    nodes = np.broadcast_to(np.asarray(nodes), (dim,))
    if not np.all(np.equal(np.mod(nodes, 1), 0)):
        raise ValueError(f"node counts must be integers, got {nodes}")
    nodes = tuple(int(n) for n in nodes)
    if any(not np.isfinite(L) or L <= 0 for L in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if not np.isfinite(horizon) or horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if any(n < 3 for n in nodes):
        raise ValueError(f"need at least 3 nodes per axis, got {nodes}")
    if int(steps) != steps or steps < 2:
        raise ValueError(f"need at least 2 time steps, got {steps}")
    return Grid(dim, extents, nodes, float(horizon), int(steps))


@dataclass(frozen=True)
class ParabolicCylinder:
    """Nodes of ``B_r(x) x (t, t + r^2)`` clipped to Q.

    ``space_nodes`` has shape ``(m, dim)``.  Time is resolved by backward
    steps: step ``k`` stands for the interval ``(t_{k-1}, t_k]`` and carries
    weight equal to its overlap with the time window.
    """

    center: tuple
    radius: float
    space_nodes: np.ndarray
    time_steps: np.ndarray
    time_weights: np.ndarray = field(repr=False)
    space_weights: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.space_nodes) * len(self.time_steps)


def ball_offsets(grid: Grid, r: float) -> np.ndarray:
    """Integer offsets ``d`` with ``|d * h| <= r`` (closed ball), shape ``(m, dim)``."""
    reach = [int(np.floor(r / h * (1 + _BALL_RTOL))) for h in grid.spacing]
    ranges = [np.arange(-q, q + 1) for q in reach]
    offs = np.stack([g.ravel() for g in np.meshgrid(*ranges, indexing="ij")], axis=1)
    dist2 = np.sum((offs * np.asarray(grid.spacing)) ** 2, axis=1)
    return offs[dist2 <= (r * (1 + _BALL_RTOL)) ** 2]


def window_steps(grid: Grid, k0: int, r: float):
    """Backward steps overlapping ``(t_k0, t_k0 + r^2) ∩ (0, T)`` and their overlaps."""
    t0 = k0 * grid.dt
    t1 = min(t0 + r * r, grid.horizon)
    if t1 <= t0:
        return np.zeros(0, dtype=int), np.zeros(0)
    k_last = min(int(np.ceil(t1 / grid.dt - 1e-12)), grid.steps - 1)
    ks = np.arange(k0 + 1, k_last + 1)
    lo = np.maximum((ks - 1) * grid.dt, t0)
    hi = np.minimum(ks * grid.dt, t1)
    keep = hi > lo
    return ks[keep], (hi - lo)[keep]


def cylinder_at(grid: Grid, center, r: float) -> ParabolicCylinder:
    """Parabolic cylinder of radius ``r`` at the node ``center = (i_1, ..., i_n, k)``."""
    center = tuple(int(c) for c in center)
    if len(center) != grid.dim + 1:
        raise ValueError(f"center must have {grid.dim + 1} indices, got {center}")
    if any(not 0 <= c < n for c, n in zip(center, grid.shape[1:] + (grid.steps,))):
        raise ValueError(f"center {center} is not a grid node")
    if r < max(grid.spacing) * (1 - _BALL_RTOL):
        raise ValueError(f"radius {r} is below the grid spacing {max(grid.spacing)}")
    idx = np.asarray(center[:-1]) + ball_offsets(grid, r)
    inside = np.all((idx >= 0) & (idx < np.asarray(grid.nodes)), axis=1)
    idx = idx[inside]
    ks, tw = window_steps(grid, center[-1], r)
    if len(idx) == 0 or len(ks) == 0:
        raise ValueError(f"cylinder at {center} with radius {r} does not meet Q")
    sw = grid.space_weights[tuple(idx.T)]
    x = tuple(float(grid.axes[a][center[a]]) for a in range(grid.dim))
    return ParabolicCylinder(
        center=(x, float(grid.times[center[-1]])),
        radius=float(r),
        space_nodes=_readonly(idx),
        time_steps=_readonly(ks),
        time_weights=_readonly(tw),
        space_weights=_readonly(sw),
    )
