"""Backward-Euler solver for linear parabolic problems

    D_t v - A^{ij}(x,t) D_ij v - c_l(x,t) D_l v - b(x,t) v = g   in Q,
    v = 0                                                        on the parabolic boundary.

Each step solves ``(I/dt - L_h^k) v^k = g^k + v^{k-1}/dt`` with ``L_h^k``
built from the coefficients frozen at ``t_k`` and the same central stencils
as :mod:`parnewt.calculus`.  Boundary rows are identity rows.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import SpaceTimeField, diff_t, diff_x, diff_xx

STEP_RTOL = 1e-12


class LinearSolveError(ArithmeticError):
    def __init__(self, message, time_index=None):
        self.time_index = time_index
        super().__init__(message)


class LinearParabolicProblem:
    """Node-sampled coefficients of the linear operator and its right-hand side."""

    def __init__(self, grid, A, b=None, c=None, g=None, lam=None):
        n = grid.dim
        shape = grid.shape
        A = np.asarray(A, dtype=float)
        if A.shape in ((), (n, n)):
            A = np.broadcast_to(A if A.ndim else A * np.eye(n), shape + (n, n))
        b = np.zeros(shape) if b is None else np.broadcast_to(np.asarray(b, dtype=float), shape)
        c = np.zeros(shape + (n,)) if c is None else np.broadcast_to(np.asarray(c, dtype=float), shape + (n,))
        if isinstance(g, SpaceTimeField):
            g = g.values
        g = np.zeros(shape) if g is None else np.broadcast_to(np.asarray(g, dtype=float), shape)
        if A.shape != shape + (n, n):
            raise ValueError(f"A has shape {A.shape}, expected {shape + (n, n)}")
        for name, arr in (("A", A), ("b", b), ("c", c), ("g", g)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite samples")
        self.grid, self.A, self.b, self.c, self.g, self.lam = grid, A, b, c, g, lam
        self._check_ellipticity()

    def _check_ellipticity(self):
        from .coeff import EllipticityError

        A = self.A
        asym = float(np.max(np.abs(A - np.swapaxes(A, -1, -2))))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(A)))):
            raise EllipticityError(f"A is not symmetric (max |A_ij - A_ji| = {asym:.3g})")
        eig = np.linalg.eigvalsh(A)
        lo, hi = eig[..., 0], eig[..., -1]
        if self.lam is None:
            bad = lo <= 0
            what = "A is not positive definite"
        else:
            tol = 1e-12 * max(self.lam, 1.0)
            bad = (lo < 1.0 / self.lam - tol) | (hi > self.lam + tol)
            what = f"eigenvalues of A leave [1/lambda, lambda] with lambda={self.lam:g}"
        if np.any(bad):
            node = tuple(int(i) for i in np.argwhere(bad)[0])
            raise EllipticityError(f"{what} at node {node}", node)

    def with_rhs(self, g):
        out = object.__new__(LinearParabolicProblem)
        out.__dict__.update(self.__dict__)
        out.g = np.broadcast_to(np.asarray(g.values if isinstance(g, SpaceTimeField) else g, dtype=float),
                                self.grid.shape)
        return out


def _stencil(grid, A, b, c, dt):
    """COO triplets of ``I/dt - L_h`` on interior rows plus identity boundary rows."""
    dims = grid.nodes
    n = grid.dim
    h = grid.spacing
    flat = np.arange(int(np.prod(dims))).reshape(dims)
    inner = grid.space_interior
    P = flat[inner]
    rows, cols, vals = [P, flat[~inner]], [P, flat[~inner]], [None, np.ones(int((~inner).sum()))]
    diag = np.full(P.shape, 1.0 / dt) - b[inner]

    def shifted(offset):
        idx = np.argwhere(inner) + np.asarray(offset)
        return flat[tuple(idx.T)]

    for i in range(n):
        e = np.zeros(n, dtype=int)
        e[i] = 1
        coef = A[..., i, i][inner] / h[i] ** 2
        diag = diag + 2.0 * coef
        adv = c[..., i][inner] / (2.0 * h[i])
        for sgn in (1, -1):
            rows.append(P)
            cols.append(shifted(sgn * e))
            vals.append(-coef - sgn * adv)
    for i in range(n):
        for j in range(i + 1, n):
            coef = (A[..., i, j] + A[..., j, i])[inner] / (4.0 * h[i] * h[j])
            for si in (1, -1):
                for sj in (1, -1):
                    off = np.zeros(n, dtype=int)
                    off[i], off[j] = si, sj
                    rows.append(P)
                    cols.append(shifted(off))
                    vals.append(-si * sj * coef)
    vals[0] = diag
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def assemble_step(problem: LinearParabolicProblem, k: int, previous=None):
    """Matrix and right-hand side of backward-Euler step ``k >= 1``."""
    grid = problem.grid
    if not 1 <= k < grid.steps:
        raise ValueError(f"time index {k} outside 1..{grid.steps - 1}")
    m = int(np.prod(grid.nodes))
    r, c, v = _stencil(grid, problem.A[k], problem.b[k], problem.c[k], grid.dt)
    M = sp.csr_matrix((v, (r, c)), shape=(m, m))
    prev = np.zeros(grid.nodes) if previous is None else np.asarray(previous)
    rhs = np.where(grid.space_interior, problem.g[k] + prev / grid.dt, 0.0)
    return M, rhs.ravel()


def _banded(M):
    """Tridiagonal LAPACK storage of a 1D step matrix."""
    M = M.todia() if not sp.isspmatrix_dia(M) else M
    m = M.shape[0]
    ab = np.zeros((3, m))
    for off, data in zip(M.offsets, M.data):
        if abs(off) > 1:
            raise ValueError("1D step matrix is not tridiagonal")
        ab[1 - off] += data
    # dia data is column-aligned; LAPACK band storage is too
    return ab


def _backward_error(M, x, rhs):
    r = M @ x - rhs
    scale = abs(M).sum(axis=1).max() * np.max(np.abs(x), initial=0.0) + np.max(np.abs(rhs), initial=0.0)
    return float(np.max(np.abs(r), initial=0.0) / scale) if scale > 0 else 0.0


def _solve_step(M, rhs, dim, k):
    try:
        if dim == 1:
            ab = _banded(M)
            solve = lambda b: scipy.linalg.solve_banded((1, 1), ab, b, check_finite=False)  # noqa: E731
        else:
            lu = spla.splu(M.tocsc())
            solve = lu.solve
        x = solve(rhs)
        err = _backward_error(M, x, rhs)
        if err > STEP_RTOL:
            x = x - solve(M @ x - rhs)
            err = _backward_error(M, x, rhs)
    except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        raise LinearSolveError(f"step {k}: {exc}", k) from exc
    if not np.all(np.isfinite(x)) or err > STEP_RTOL:
        raise LinearSolveError(f"step {k}: relative residual {err:.3g} exceeds {STEP_RTOL:g}", k)
    return x


def solve_linear_parabolic(problem: LinearParabolicProblem) -> SpaceTimeField:
    """March the backward-Euler steps from the zero initial slice."""
    grid = problem.grid
    v = np.zeros(grid.shape)
    for k in range(1, grid.steps):
        M, rhs = assemble_step(problem, k, v[k - 1])
        v[k] = _solve_step(M, rhs, grid.dim, k).reshape(grid.nodes)
        # pivoting can leave rounding noise in the identity rows
        v[k][~grid.space_interior] = 0.0
    return SpaceTimeField(grid, v)


def apply_linear_operator(problem: LinearParabolicProblem, v: SpaceTimeField) -> SpaceTimeField:
    """``D_t v - A^{ij} D_ij v - c.Dv - b v`` at interior nodes (zero on the parabolic boundary)."""
    grid = problem.grid
    if v.grid != grid:
        raise ValueError("field and problem live on different grids")
    n = grid.dim
    out = diff_t(v).values - problem.b * v.values
    for i in range(n):
        out = out - problem.c[..., i] * diff_x(v, i).values
        for j in range(n):
            out = out - problem.A[..., i, j] * diff_xx(v, i, j).values
    return SpaceTimeField(grid, np.where(grid.interior, out, 0.0))
