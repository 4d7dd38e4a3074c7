"""
Principal Dirichlet eigenpair of the negated diffusion generator.

The generator ``G = b . grad + (eps/2) tr(a grad^2)`` is discretised on a
tensor grid over the domain's bounding box: central second differences for
the diffusion, the 7-point mixed stencil for off-diagonal ``a``, and
first-order upwinding for the drift. Nodes outside the open domain carry
the zero boundary value. The assembled matrix ``L = -G`` is an M-matrix, and
its smallest eigenvalue is the exit rate.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import DiffusionSpec, Domain


class DegenerateDomainError(ValueError):
    pass


class StencilError(ValueError):
    """Discretisation lost the M-matrix sign pattern."""


class ConvergenceError(RuntimeError):
    pass


class PerronError(RuntimeError):
    """Converged eigenvector has negative entries."""


@dataclass(frozen=True, eq=False)
class OperatorGrid:
    axes: tuple[np.ndarray, ...]
    h: np.ndarray
    mask: np.ndarray           # interior flags, shape == self.shape

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def n_interior(self) -> int:
        return int(self.mask.sum())

    def full_points(self) -> np.ndarray:
        return np.array(list(itertools.product(*self.axes)))

    @property
    def points(self) -> np.ndarray:
        """Interior node coordinates, (m, d), in C order."""
        return self.full_points()[self.mask.ravel()]

    def interior_index(self) -> np.ndarray:
        """Map from flat full-grid index to interior index (-1 off the interior)."""
        idx = np.full(self.mask.size, -1, dtype=np.int64)
        flat = np.flatnonzero(self.mask.ravel())
        idx[flat] = np.arange(flat.size)
        return idx


def build_grid(D: Domain, resolution) -> OperatorGrid:
    """Uniform grid with ``resolution`` nodes per axis over D's bounding box.

    Box faces fall on the outermost nodes, so those are boundary nodes; for a
    ball every node outside the open ball is a boundary node.
    """
    lo, hi = D.bounding_box()
    if lo.size > 3:
        raise ValueError("grid discretisation supports d <= 3")
    res = np.broadcast_to(np.atleast_1d(resolution), lo.shape).astype(int)
    if np.any(res < 3):
        raise ValueError("resolution must be at least 3 per axis")
    axes = tuple(np.linspace(a, b, n) for a, b, n in zip(lo, hi, res))
    h = np.array([(b - a) / (n - 1) for a, b, n in zip(lo, hi, res)])
    pts = np.array(list(itertools.product(*axes)))
    mask = D.contains(pts).reshape(tuple(res))
    if mask.sum() < 3:
        raise DegenerateDomainError(
            f"only {int(mask.sum())} interior nodes; refine the grid")
    return OperatorGrid(axes, h, mask)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    L: sp.csr_matrix
    grid: OperatorGrid
    drift: np.ndarray          # drift vector per interior node, (m, d)

    @property
    def shape(self):
        return self.L.shape


def discretize(M, diffusion: DiffusionSpec, eps: float, grid: OperatorGrid,
               offset=None) -> SparseOperator:
    """Assemble ``L = -G`` on the interior nodes.

    The drift at node ``x`` is ``M x`` plus ``offset[x]`` when given (per-node
    constant terms such as ``B u(x)``). Upwind directions follow the sign of
    the total drift at each node.
    """
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d, shape = grid.dim, np.array(grid.shape)
    pts = grid.points
    m = pts.shape[0]
    b = pts @ M.T
    if offset is not None:
        b = b + np.asarray(offset, dtype=float).reshape(m, d)
    a = diffusion.covariance(pts)                     # (m, d, d)
    full_idx = np.array(np.unravel_index(np.flatnonzero(grid.mask.ravel()), grid.shape)).T
    h = grid.h

    rows, cols, vals = [], [], []
    rng = np.arange(m)
    n_full = grid.mask.size

    def add(shift, coef):
        nb = full_idx + shift
        inside = np.all((nb >= 0) & (nb < shape), axis=1)
        # neighbours off the grid go to a virtual boundary column
        flat = np.full(m, n_full, dtype=np.int64)
        flat[inside] = np.ravel_multi_index(tuple(nb[inside].T), grid.shape)
        rows.append(rng)
        cols.append(flat)
        vals.append(coef)

    for j in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[j] = 1
        diff = 0.5 * eps * a[:, j, j] / h[j] ** 2
        add(e, diff + np.maximum(b[:, j], 0) / h[j])
        add(-e, diff + np.maximum(-b[:, j], 0) / h[j])
        for k in range(j + 1, d):
            f = np.zeros(d, dtype=np.int64)
            f[k] = 1
            c = eps * a[:, j, k] / (2 * h[j] * h[k])
            pos, neg = np.maximum(c, 0), np.maximum(-c, 0)
            add(e + f, pos)
            add(-e - f, pos)
            add(e - f, neg)
            add(f - e, neg)
            ax = -np.abs(c)
            for s in (e, -e, f, -f):
                add(s, ax)

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    G = sp.csr_matrix((v, (r, c)), shape=(m, n_full + 1))
    G.sum_duplicates()
    if G.data.size and G.data.min() < -1e-12 * np.abs(G.data).max():
        bad = np.unique(np.repeat(np.arange(m), np.diff(G.indptr))[G.data < 0])
        raise StencilError(
            "cross-diffusion too strong for the grid at nodes "
            f"{pts[bad[:10]].tolist()}{' ...' if bad.size > 10 else ''}; "
            "refine the grid or use a diagonal diffusion matrix")
    diag = np.asarray(G.sum(axis=1)).ravel()
    sel = np.append(grid.interior_index(), -1)
    G = G.tocoo()
    keep = sel[G.col] >= 0
    Gi = sp.csr_matrix((G.data[keep], (G.row[keep], sel[G.col[keep]])), shape=(m, m))
    L = (sp.diags(diag) - Gi).tocsr()
    return SparseOperator(L, grid, b)


@dataclass(frozen=True, eq=False)
class EigenPair:
    lam: float
    psi: np.ndarray
    residual: float
    iterations: int


def residual_floor(L) -> float:
    """Round-off level of ``||L psi||_inf`` for ``||psi||_inf = 1``."""
    return 64 * np.finfo(float).eps * abs(L).sum(axis=1).max()


def principal_eigenpair(op, tol: float = 1e-12, max_iter: int = 1000,
                        v0=None) -> EigenPair:
    """Smallest eigenpair of an M-matrix by inverse power iteration.

    One sparse LU factorisation, then ``v <- L^{-1} v`` normalised in the
    max norm until the Rayleigh quotient settles to ``tol`` (relative) and
    the residual is below ``1e-8 * lam`` or the round-off floor.
    """
    L = op.L if isinstance(op, SparseOperator) else sp.csr_matrix(op)
    n = L.shape[0]
    lu = splu(L.tocsc())
    v = np.ones(n) if v0 is None else np.asarray(v0, dtype=float).copy()
    v /= np.abs(v).max()
    floor = residual_floor(L)
    lam_old = np.inf
    for it in range(1, max_iter + 1):
        w = lu.solve(v)
        v = w / np.abs(w).max()
        Lv = L @ v
        lam = (v @ Lv) / (v @ v)
        res = np.abs(Lv - lam * v).max()
        if abs(lam - lam_old) <= tol * abs(lam) + floor and res <= 1e-8 * abs(lam) + floor:
            break
        lam_old = lam
    else:
        raise ConvergenceError(
            f"inverse iteration did not converge in {max_iter} steps "
            f"(residual {res:.3e}, lambda {lam:.6g})")
    if v.sum() < 0:
        v = -v
    v /= v.max()
    if v.min() < -1e-10:
        raise PerronError(f"eigenvector has a negative entry {v.min():.3e}")
    v = np.maximum(v, 0.0)
    res = float(np.abs(L @ v - lam * v).max())
    return EigenPair(float(lam), v, res, it)


def verify_residual(op, pair: EigenPair) -> dict:
    """Recompute ``||L psi - lam psi||_inf`` directly from the matrix."""
    L = op.L if isinstance(op, SparseOperator) else sp.csr_matrix(op)
    psi = pair.psi
    r = float(np.max(np.abs(L @ psi - pair.lam * psi)))
    floor = float(residual_floor(L))
    return {
        "lambda": pair.lam,
        "residual": r,
        "relative": r / abs(pair.lam),
        "roundoff_floor": floor,
        "ok": bool(r <= 1e-8 * abs(pair.lam) + floor and psi.min() >= 0),
    }


def write_psi_csv(grid: OperatorGrid, psi, path, header="psi") -> None:
    pts = grid.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(grid.dim)] + [header])
        for x, v in zip(pts, psi):
            w.writerow([repr(float(t)) for t in x] + [repr(float(v))])
