"""
Deterministic closed-loop flow ``x(t) = exp(M t) x0``.

Trajectories are produced by repeated multiplication with a single
propagator ``exp(M dt)``, so they are exact up to round-off. The invariant
set estimate classifies grid nodes by whether their forward orbit stays in
the closed domain up to a finite horizon.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, null_space

from .model import Domain


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class InvariantSetEstimate:
    nodes: np.ndarray          # all grid nodes in the closed domain, (m, d)
    invariant: np.ndarray      # bool flag per node
    nonempty: bool
    horizon: float
    equilibrium: np.ndarray | None

    @property
    def grid_nodes(self) -> np.ndarray:
        return self.nodes[self.invariant]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite entries in flow input")


def _step_schedule(T: float, dt: float) -> np.ndarray:
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    steps = np.full(n, dt)
    steps[-1] = T - dt * (n - 1)
    return steps


def integrate_flow(M, x0, T: float, dt: float) -> Trajectory:
    """Sample the linear flow on ``[0, T]`` with step ``dt``.

    The last step is shortened so the trajectory ends exactly at ``T``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    _check_finite(M, x0)
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    steps = _step_schedule(T, dt)
    E = expm(M * dt)
    states = np.empty((steps.size + 1, x0.size))
    states[0] = x0
    x = x0
    for k, s in enumerate(steps):
        x = (E if s == dt else expm(M * s)) @ x
        states[k + 1] = x
    times = np.concatenate([[0.0], np.cumsum(steps)])
    times[-1] = T
    return Trajectory(times, states)


def equilibrium_in_domain(M, D: Domain, rank_tol: float = 1e-10) -> np.ndarray | None:
    """An equilibrium of ``x' = M x`` lying in the closure of ``D``, if any."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    origin = np.zeros(M.shape[0])
    if D.contains_closure(origin):
        return origin
    K = null_space(M, rcond=rank_tol)
    if K.shape[1] == 0:
        return None
    # nearest kernel point to the domain's centre, then each basis line
    lo, hi = D.bounding_box()
    c = (lo + hi) / 2
    p = K @ (K.T @ c)
    if D.contains_closure(p):
        return p
    for v in K.T:
        iv = D.line_interval(v)
        if iv is not None:
            t = 0.5 * (iv[0] + iv[1])
            x = t * v
            if D.contains_closure(x, tol=1e-12):
                return x
    return None


def default_horizon(M) -> float:
    re = np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)).real))
    return 10.0 / max(1e-6, re)


def grid_nodes(D: Domain, resolution) -> tuple[np.ndarray, float]:
    """Tensor grid over the bounding box, restricted to the closed domain."""
    lo, hi = D.bounding_box()
    res = np.broadcast_to(np.atleast_1d(resolution), lo.shape)
    if np.any(res < 2):
        raise ValueError("grid resolution must be at least 2 per axis")
    axes = [np.linspace(a, b, int(n)) for a, b, n in zip(lo, hi, res)]
    h = max((b - a) / (n - 1) for a, b, n in zip(lo, hi, res))
    pts = np.array(list(itertools.product(*axes)))
    return pts[D.contains_closure(pts, tol=1e-12)], float(h)


def estimate_invariant_set(M, D: Domain, grid_resolution, T: float | None = None,
                           dt: float | None = None) -> InvariantSetEstimate:
    """Grid under-approximation of the maximal invariant set in the closure of D.

    A node counts as invariant when its sampled orbit up to ``T`` never
    leaves the closed domain inflated by the grid spacing.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] > 3:
        raise ValueError("invariant-set grids are limited to d <= 3")
    nodes, h = grid_nodes(D, grid_resolution)
    T = default_horizon(M) if T is None else T
    dt = T / 2000 if dt is None else dt
    steps = _step_schedule(T, dt)
    E = expm(M * dt).T
    X = nodes.copy()
    ok = D.contains_closure(X, tol=h)
    for s in steps:
        X = X @ (E if s == dt else expm(M * s).T)
        ok &= D.contains_closure(X, tol=h)
        if not ok.any():
            break
    eq = equilibrium_in_domain(M, D)
    return InvariantSetEstimate(nodes, ok, bool(ok.any() or eq is not None), T, eq)


def write_invariant_csv(est: InvariantSetEstimate, path) -> None:
    d = est.nodes.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] + ["invariant"])
        for x, flag in zip(est.nodes, est.invariant):
            w.writerow([repr(float(v)) for v in x] + [int(flag)])


def exit_time_deterministic(M, x0, D: Domain, dt: float, T_cap: float) -> float | None:
    """First time the orbit from ``x0`` leaves the closed domain.

    The crossing is bracketed on the sampling grid and then refined by
    bisection to ``dt * 1e-3``. Returns None when no exit happens by ``T_cap``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    _check_finite(M, x)
    E = expm(M * dt)
    t = 0.0
    while t < T_cap:
        nxt = E @ x
        if D.signed_distance(nxt) > 0:
            a, b = 0.0, dt
            while b - a > dt * 1e-3:
                mid = 0.5 * (a + b)
                if D.signed_distance(expm(M * mid) @ x) > 0:
                    b = mid
                else:
                    a = mid
            return t + b
        x, t = nxt, t + dt
    return None
