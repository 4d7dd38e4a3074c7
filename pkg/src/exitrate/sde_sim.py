"""
Euler-Maruyama exit-time sampling and tail-rate estimation.

Each run draws its Gaussian increments from a counter-based stream keyed by
the run seed, so a run's path depends only on ``(seed, step, component)``.
All runs of a sample set advance together as one vectorised batch, and the
result is identical to simulating every run on its own.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree
from scipy.special import ndtri

from .model import DiffusionSpec, Domain


class SimulationError(RuntimeError):
    pass


class TailStarvedError(ValueError):
    pass


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_normals(keys: np.ndarray, step: int, dim: int) -> np.ndarray:
    """Standard normals for ``(key, step, component)``, shape (len(keys), dim)."""
    keys = np.asarray(keys, dtype=np.uint64)
    ctr = np.uint64(step) * np.uint64(dim) + np.arange(dim, dtype=np.uint64)
    with np.errstate(over="ignore"):
        c = _mix64(ctr * _GOLDEN + _GOLDEN)
        z = _mix64(keys[:, None] ^ c[None, :])
    u = ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def _run_keys(seeds) -> np.ndarray:
    s = np.asarray(seeds, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64(s * _GOLDEN + np.uint64(1))


def _apply(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    # rows of X times M^T, written elementwise so the bits do not depend on
    # the batch size
    out = X[:, :1] * M[:, 0]
    for j in range(1, M.shape[1]):
        out = out + X[:, j:j + 1] * M[:, j]
    return out


class LinearDrift:
    """``b(x) = M x``."""

    def __init__(self, M):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return _apply(self.M, X)


class PolicyDrift(LinearDrift):
    """``b(x) = M x + B u(x)`` with ``u`` read off the nearest interior grid node.

    ``grid`` is an :class:`~exitrate.elliptic_eig.OperatorGrid` and ``values``
    holds one control vector per interior node.
    """

    def __init__(self, M, B, grid, values):
        super().__init__(M)
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        values = np.asarray(values, dtype=float).reshape(grid.n_interior, -1)
        self.lower = np.array([ax[0] for ax in grid.axes])
        self.h = np.asarray(grid.h)
        self.shape = np.array(grid.shape)
        full = grid.full_points()
        interior = full[grid.mask.ravel()]
        _, nearest = cKDTree(interior).query(full)
        # push per-node controls through B once
        self.table = _apply(self.B, values)[nearest]

    def __call__(self, X):
        idx = np.rint((X - self.lower) / self.h).astype(np.int64)
        idx = np.clip(idx, 0, self.shape - 1)
        flat = np.ravel_multi_index(tuple(idx.T), tuple(self.shape))
        return _apply(self.M, X) + self.table[flat]


def _as_drift(drift):
    return drift if callable(drift) else LinearDrift(drift)


def _simulate_batch(drift, diffusion: DiffusionSpec, eps: float, x0, D: Domain,
                    dt: float, t_max: float, seeds) -> np.ndarray:
    drift = _as_drift(drift)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not D.contains(x0):
        raise ValueError(f"initial state {x0} is not inside the domain")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if eps < 0:
        raise ValueError("epsilon must be non-negative")
    keys = _run_keys(seeds)
    n, d = keys.size, x0.size
    out = np.full(n, np.nan)
    alive = np.arange(n)
    X = np.tile(x0, (n, 1))
    noise_amp = np.sqrt(eps * dt)
    n_steps = int(round(t_max / dt))
    base = diffusion.base
    for k in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            step = drift(X) * dt
        if eps > 0:
            xi = counter_normals(keys[alive], k, d)
            m = diffusion.scale(X)
            step = step + (noise_amp * m)[:, None] * _apply(base, xi)
        with np.errstate(over="ignore", invalid="ignore"):
            X = X + step
        if not np.all(np.isfinite(X)):
            raise SimulationError(f"state blew up at step {k}")
        gone = ~D.contains(X)
        if gone.any():
            out[alive[gone]] = (k + 1) * dt
            keep = ~gone
            alive, X = alive[keep], X[keep]
            if alive.size == 0:
                break
    return out


def simulate_exit(drift, diffusion: DiffusionSpec, eps: float, x0, D: Domain,
                  dt: float, t_max: float, seed: int) -> float | None:
    """Exit time of one Euler-Maruyama path, or None if it survives to ``t_max``.

    ``drift`` is a matrix ``M`` (closed loop) or a callable drift field such
    as :class:`PolicyDrift`. Exit is checked at the end of each step.
    """
    t = _simulate_batch(drift, diffusion, eps, x0, D, dt, t_max, [seed])[0]
    return None if np.isnan(t) else float(t)


@dataclass(frozen=True, eq=False)
class ExitSampleSet:
    times: np.ndarray          # per run; NaN marks a censored run
    eps: float
    dt: float
    t_max: float
    seed: int

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def exit_times(self) -> np.ndarray:
        return self.times[~np.isnan(self.times)]

    @property
    def censored_count(self) -> int:
        return int(np.isnan(self.times).sum())


def sample_exit_times(drift, diffusion: DiffusionSpec, eps: float, x0, D: Domain,
                      dt: float, t_max: float, n: int, base_seed: int) -> ExitSampleSet:
    """``n`` independent runs; run ``i`` uses seed ``base_seed + i``."""
    if n < 1:
        raise ValueError("need at least one run")
    seeds = np.arange(n, dtype=np.uint64) + np.uint64(base_seed)
    times = _simulate_batch(drift, diffusion, eps, x0, D, dt, t_max, seeds)
    return ExitSampleSet(times, float(eps), float(dt), float(t_max), int(base_seed))


def survival_curve(samples: ExitSampleSet, t_grid) -> np.ndarray:
    """Empirical ``P(tau > t)``; censored runs count as survivors up to ``t_max``."""
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    ex = np.sort(samples.exit_times)
    above = ex.size - np.searchsorted(ex, t, side="right")
    cens = samples.censored_count * (t <= samples.t_max)
    return (above + cens) / samples.n


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    stderr: float
    window: tuple[float, float]
    r_squared: float
    n_points: int


def default_window(samples: ExitSampleSet) -> tuple[float, float]:
    ex = samples.exit_times
    if ex.size == 0:
        raise TailStarvedError("no exits observed; increase t_max or epsilon")
    return float(np.median(ex)), float(np.quantile(ex, 0.9))


def estimate_exit_rate(samples: ExitSampleSet, window=None) -> RateEstimate:
    """Negated least-squares slope of ``log S(t)`` over the tail window.

    The regression points are the distinct exit times inside the window.
    The default window runs from the median exit time to the 90th percentile.
    ``stderr`` is the exponential-tail standard error ``rate / sqrt(k)`` with
    ``k`` exits in the window; the OLS slope error is far too optimistic
    because neighbouring survival values share almost all their data.
    """
    t_lo, t_hi = default_window(samples) if window is None else map(float, window)
    if not t_lo < t_hi:
        raise ValueError("window must satisfy t_lo < t_hi")
    if survival_curve(samples, [t_hi])[0] < 5 / samples.n:
        raise TailStarvedError(
            f"S({t_hi:g}) < 5/N: too few survivors in the tail; "
            "use more runs or a shorter window")
    ex = samples.exit_times
    pts = np.unique(ex[(ex >= t_lo) & (ex <= t_hi)])
    S = survival_curve(samples, pts)
    pts, S = pts[S > 0], S[S > 0]
    if np.unique(S).size < 10:
        raise TailStarvedError(
            f"only {np.unique(S).size} distinct survival values in window "
            f"[{t_lo:g}, {t_hi:g}]; need 10")
    fit = stats.linregress(pts, np.log(S))
    k = int(np.count_nonzero((ex > t_lo) & (ex <= t_hi)))
    rate = float(-fit.slope)
    return RateEstimate(rate, abs(rate) / np.sqrt(k), (t_lo, t_hi),
                        float(fit.rvalue**2), int(pts.size))


def write_samples_csv(samples: ExitSampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "exit_time", "censored"])
        for i, t in enumerate(samples.times):
            cens = bool(np.isnan(t))
            w.writerow([i, "" if cens else repr(float(t)), int(cens)])


def write_survival_csv(samples: ExitSampleSet, t_grid, path) -> None:
    S = survival_curve(samples, t_grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "S_hat"])
        for t, s in zip(np.atleast_1d(t_grid), S):
            w.writerow([repr(float(t)), repr(float(s))])


def write_sidecar(path, params: dict, estimate: RateEstimate | None = None) -> None:
    doc = {"parameters": params}
    if estimate is not None:
        doc["estimate"] = asdict(estimate)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
