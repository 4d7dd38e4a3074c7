"""
Brute-force reference computations used to check the main solvers.

None of these share code paths with the routines they check.
"""
from __future__ import annotations

import numpy as np


def lattice_action_dp(x0: float, T: float, N: int, m: float, lower: float,
                      upper: float, bins: int = 64, sigma: float = 1.0) -> float:
    """Minimum discrete action of a 1-D path restricted to a state lattice.

    States after the start take values on ``bins`` equally spaced points of
    ``[lower, upper]``; every pair of lattice points is an allowed move. The
    per-step cost is the same midpoint rule as the continuous minimiser with
    drift ``m x`` and constant noise ``sigma``.
    """
    dt = T / N
    xs = np.linspace(lower, upper, bins)

    def cost(a, b):
        r = (b - a) / dt - m * 0.5 * (a + b)
        return 0.5 * dt * r * r / sigma**2

    C = cost(xs[:, None], xs[None, :])
    V = np.zeros(bins)
    for _ in range(N - 1):
        V = np.min(C + V[None, :], axis=1)
    return float(np.min(cost(x0, xs) + V))


def non_dominated_bruteforce(vectors) -> np.ndarray:
    """Boolean mask of vectors not dominated by any other (double loop)."""
    vs = [tuple(float(t) for t in v) for v in vectors]
    keep = []
    for i, a in enumerate(vs):
        dominated = False
        for j, b in enumerate(vs):
            if i == j:
                continue
            le = all(bk <= ak for ak, bk in zip(a, b))
            lt = any(bk < ak for ak, bk in zip(a, b))
            if le and lt:
                dominated = True
                break
        keep.append(not dominated)
    return np.array(keep)


def linear_fit_intercept_bias(eps, g) -> float:
    """Intercept of the least-squares line through ``(eps_k, g(eps_k))``.

    Closed-form normal equations, used to predict how a known correction
    term shifts the extrapolated exponent.
    """
    e = np.asarray(eps, dtype=float)
    y = np.asarray([g(t) for t in e], dtype=float)
    n = e.size
    sx, sy, sxx, sxy = e.sum(), y.sum(), (e * e).sum(), (e * y).sum()
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    return float((sy - slope * sx) / n)


def brownian_exit_rate_1d(half_width: float, eps: float) -> float:
    """Dirichlet principal eigenvalue of ``(eps/2) d^2/dx^2`` on an interval."""
    return 0.5 * eps * (np.pi / (2 * half_width)) ** 2
