"""
Discrete large-deviation action of confined paths.

The action of a path ``phi_0 .. phi_N`` on a uniform step ``dt`` is the
midpoint rule

    I = 1/2 sum_k dt * r_k^T a(phibar_k)^{-1} r_k,
    r_k = (phi_{k+1} - phi_k)/dt - M phibar_k,  phibar_k = (phi_k + phi_{k+1})/2,

which vanishes exactly on implicit-midpoint orbits of ``x' = M x``. Paths
start at a fixed ``x0`` and are kept in the closed domain by projection.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .model import DiffusionSpec, Domain, FeedbackTuple, MultiChannelSystem, closed_loop


@dataclass(frozen=True, eq=False)
class DiscretePath:
    T: float
    states: np.ndarray         # (N+1, d); states[0] is the fixed start

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]


@dataclass(frozen=True, eq=False)
class ActionReport:
    value: float
    path: DiscretePath
    converged: bool
    iterations: int
    starts: list = field(default_factory=list)   # (label, value, converged) per start


def _pieces(states, dt, M, diffusion: DiffusionSpec):
    mid = 0.5 * (states[1:] + states[:-1])
    r = (states[1:] - states[:-1]) / dt - mid @ M.T
    m = diffusion.scale(mid)
    P = np.linalg.inv(diffusion.base @ diffusion.base.T)
    w = 1.0 / (m * m)
    Pr = r @ P.T
    return mid, r, m, w, Pr


def action_value(path: DiscretePath, M, diffusion: DiffusionSpec) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _, r, _, w, Pr = _pieces(path.states, path.dt, M, diffusion)
    return float(0.5 * path.dt * np.sum(w * np.sum(r * Pr, axis=1)))


def action_gradient(path: DiscretePath, M, diffusion: DiffusionSpec) -> np.ndarray:
    """Gradient of :func:`action_value` with respect to ``states[1:]``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    dt = path.dt
    mid, r, m, w, Pr = _pieces(path.states, dt, M, diffusion)
    q = w[:, None] * Pr
    qM = (0.5 * dt) * (q @ M)
    # modulation enters through w(phibar); dw/dphibar = -2 m^-3 grad m
    quad = np.sum(r * Pr, axis=1)
    gw = (0.5 * dt * quad * (-2.0 / m**3))[:, None] * diffusion.scale_grad(mid) * 0.5
    g = np.zeros_like(path.states)
    g[1:] += q - qM + gw
    g[:-1] += -q - qM + gw
    return g[1:]


def _descend(Y0, x0, T, M, diffusion, D, max_iter, gtol):
    N = Y0.shape[0]
    dt = T / N

    def f_and_g(Y):
        p = DiscretePath(T, np.vstack([x0, Y]))
        return action_value(p, M, diffusion), action_gradient(p, M, diffusion)

    Y = D.project(Y0)
    f, g = f_and_g(Y)
    alpha = dt
    for it in range(1, max_iter + 1):
        pg = Y - D.project(Y - g)
        if np.abs(pg).max() < gtol * (1 + f):
            return Y, f, True, it - 1
        # Armijo along the projection arc, halving from the trial step
        while True:
            Yn = D.project(Y - alpha * g)
            fn, gn = f_and_g(Yn)
            if fn <= f + 1e-4 * np.sum(g * (Yn - Y)) or alpha < 1e-16:
                break
            alpha *= 0.5
        s, yk = Yn - Y, gn - g
        sy = np.sum(s * yk)
        # Barzilai-Borwein trial step for the next iteration
        alpha = np.sum(s * s) / sy if sy > 0 else alpha * 2
        alpha = min(max(alpha, 1e-12), 1e6)
        Y, f, g = Yn, fn, gn
    pg = Y - D.project(Y - g)
    return Y, f, bool(np.abs(pg).max() < gtol * (1 + f)), max_iter


def minimize_action(x0, T: float, N: int, M, diffusion: DiffusionSpec, D: Domain,
                    max_iter: int = 10_000, gtol: float = 1e-6,
                    seed: int = 0) -> ActionReport:
    """Minimise the discrete action over paths confined to the closed domain.

    Three starts (resting at ``x0``, the projected flow, a random interior
    perturbation) are each run through projected gradient descent with
    Armijo backtracking; the lowest value wins.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if N < 16:
        raise ValueError("N must be at least 16")
    if not D.contains_closure(x0, tol=1e-10):
        raise ValueError("x0 must lie in the closed domain")
    t = np.linspace(0, T, N + 1)[1:]
    E = expm(M * (T / N))
    flow = np.empty((N, x0.size))
    x = x0
    for k in range(N):
        x = E @ x
        flow[k] = x
    rng = np.random.default_rng(seed)
    lo, hi = D.bounding_box()
    jitter = 0.1 * (hi - lo) * rng.standard_normal((N, x0.size))
    starts = [("rest", np.tile(x0, (N, 1))),
              ("flow", D.project(flow)),
              ("random", D.project(x0 + jitter * np.sqrt(t / T)[:, None]))]
    best, table = None, []
    for label, Y0 in starts:
        Y, f, ok, its = _descend(Y0, x0, T, M, diffusion, D, max_iter, gtol)
        table.append((label, f, ok))
        if best is None or f < best[1]:
            best = (Y, f, ok, its)
    Y, f, ok, its = best
    return ActionReport(f, DiscretePath(T, np.vstack([x0, Y])), ok, its, table)


@dataclass(frozen=True)
class REstimate:
    r: float
    table: list                # (T, N, value, value/T)
    stabilized: bool


def estimate_r(x0, M, diffusion: DiffusionSpec, D: Domain, T_schedule,
               steps_per_unit: float = 8.0) -> REstimate:
    """``(1/T) inf I_T`` along an increasing horizon schedule.

    The last entry is the estimate; ``stabilized`` says the last two entries
    agree to 5% (or are both below 1e-9).
    """
    Ts = [float(T) for T in T_schedule]
    if len(Ts) < 3:
        raise ValueError("schedule needs at least three horizons")
    if any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ValueError("schedule must be increasing")
    table = []
    for T in Ts:
        N = max(16, int(np.ceil(steps_per_unit * T)))
        rep = minimize_action(x0, T, N, M, diffusion, D)
        table.append((T, N, rep.value, rep.value / T))
    a, b = table[-2][3], table[-1][3]
    stable = abs(a - b) <= 0.05 * max(abs(a), abs(b)) or max(abs(a), abs(b)) < 1e-9
    return REstimate(b, table, bool(stable))


@dataclass(frozen=True)
class ExponentFit:
    intercept: float
    slope: float
    eps: list
    y: list
    residuals: list


def extrapolate_rate_exponent(pairs) -> ExponentFit:
    """Fit ``-eps log lam = r + c eps`` and return the intercept ``r``."""
    pairs = [(float(e), float(l)) for e, l in pairs]
    if len(pairs) < 3:
        raise ValueError("need at least three (eps, lambda) pairs")
    eps = np.array([p[0] for p in pairs])
    lam = np.array([p[1] for p in pairs])
    if np.any(lam <= 0):
        raise ValueError("eigenvalues must be positive")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps must be strictly decreasing")
    y = -eps * np.log(lam)
    slope, intercept = np.polyfit(eps, y, 1)
    res = y - (intercept + slope * eps)
    return ExponentFit(float(intercept), float(slope), eps.tolist(), y.tolist(),
                       res.tolist())


def corollary_check(r_gamma_star: float, r_channels, tol: float = 1e-6) -> tuple[bool, float]:
    """Margin ``r* - max_i r_i`` and whether it clears ``-tol``."""
    margin = float(r_gamma_star) - float(np.max(r_channels))
    return margin >= -tol, margin


def minimal_action_selection(candidates, system: MultiChannelSystem, x0, T: float,
                             N: int, diffusion: DiffusionSpec, D: Domain):
    """Candidate with the lowest minimised action; earlier entries win ties."""
    if not candidates:
        raise ValueError("no candidates")
    table = []
    for fb in candidates:
        fb = fb if isinstance(fb, FeedbackTuple) else FeedbackTuple(tuple(fb))
        rep = minimize_action(x0, T, N, closed_loop(system, fb), diffusion, D)
        table.append(rep.value)
    best = int(np.argmin(table))
    return candidates[best], table


def write_table_csv(est: REstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "N", "inf_value", "value_over_T"])
        for T, N, v, r in est.table:
            w.writerow([repr(T), N, repr(v), repr(r)])


def write_path_csv(path_obj: DiscretePath, path) -> None:
    d = path_obj.states.shape[1]
    t = np.linspace(0, path_obj.T, path_obj.N + 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{j + 1}" for j in range(d)])
        for tk, x in zip(t, path_obj.states):
            w.writerow([repr(float(tk))] + [repr(float(v)) for v in x])


def write_fit_json(fit: ExponentFit, path) -> None:
    with open(path, "w") as fh:
        json.dump({"intercept": fit.intercept, "slope": fit.slope, "eps": fit.eps,
                   "y": fit.y, "residuals": fit.residuals}, fh, indent=2)
        fh.write("\n")
