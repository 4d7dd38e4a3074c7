"""
Per-channel controlled eigenvalue problem solved by policy iteration.

For channel ``i`` the other channels keep their linear feedbacks and channel
``i`` picks a control field ``u(x)`` in its box. Each sweep solves the linear
eigenproblem for the current field and then sets ``u(x)`` to maximise
``<B_i^T grad psi(x), u>``, i.e. the control that pushes the state up the
eigenfunction toward its interior peak. This never increases the exit rate
for an M-matrix discretisation, and a sweep that does increase it by more
than ``10 * tol`` is reported as an error.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .elliptic_eig import (EigenPair, OperatorGrid, SparseOperator, discretize,
                           principal_eigenpair)
from .model import (ControlBox, ControlSpec, DiffusionSpec, FeedbackTuple,
                    MultiChannelSystem, closed_loop)

TIE_TOL = 1e-12


class ConventionError(RuntimeError):
    """Policy improvement raised the principal eigenvalue."""


class ChannelError(RuntimeError):
    def __init__(self, channel: int, cause: Exception):
        super().__init__(f"channel {channel}: {cause}")
        self.channel = channel


@dataclass(frozen=True, eq=False)
class PolicyField:
    channel: int
    values: np.ndarray         # (m, r_i), one control per interior node

    def check(self, box: ControlBox, tol: float = 1e-12) -> None:
        if not np.all(box.contains(self.values, tol)):
            raise ValueError(f"policy for channel {self.channel} leaves its control box")

    @classmethod
    def constant(cls, channel: int, grid: OperatorGrid, u) -> "PolicyField":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(channel, np.tile(u, (grid.n_interior, 1)))


@dataclass(frozen=True, eq=False)
class ChannelProblem:
    system: MultiChannelSystem
    feedbacks: FeedbackTuple   # full tuple; entry ``channel`` is ignored
    channel: int
    controls: ControlSpec
    diffusion: DiffusionSpec
    eps: float
    grid: OperatorGrid

    @property
    def frozen_matrix(self) -> np.ndarray:
        """``A + sum_{j != i} B_j gamma_j``."""
        return closed_loop(self.system, self.feedbacks, skip=self.channel)

    @property
    def B(self) -> np.ndarray:
        return self.system.channels[self.channel]

    @property
    def box(self) -> ControlBox:
        return self.controls[self.channel]


@dataclass(frozen=True, eq=False)
class HjbSolution:
    eigen: EigenPair
    policy: PolicyField
    trace: list = field(default_factory=list)
    converged: bool = True

    @property
    def lam(self) -> float:
        return self.eigen.lam

    @property
    def sweeps(self) -> int:
        return len(self.trace)


def assemble_channel_operator(prob: ChannelProblem, policy: PolicyField) -> SparseOperator:
    vals = np.asarray(policy.values, dtype=float).reshape(prob.grid.n_interior, -1)
    return discretize(prob.frozen_matrix, prob.diffusion, prob.eps, prob.grid,
                      offset=vals @ prob.B.T)


def grid_gradient(grid: OperatorGrid, psi) -> np.ndarray:
    """Gradient of an interior grid function with zero boundary data.

    Central differences where both neighbours are interior, one-sided
    differences toward the interior neighbour next to the boundary, zero
    when neither neighbour is interior.
    """
    full = np.zeros(grid.shape)
    full[grid.mask] = psi
    grad = np.zeros((grid.n_interior, grid.dim))
    for j in range(grid.dim):
        h = grid.h[j]
        fwd = np.roll(full, -1, axis=j)
        bwd = np.roll(full, 1, axis=j)
        mfwd = np.roll(grid.mask, -1, axis=j)
        mbwd = np.roll(grid.mask, 1, axis=j)
        # roll wraps around; edge nodes are never interior so the wrapped
        # neighbours only matter through the masks
        edge = [slice(None)] * grid.dim
        edge[j] = -1
        mfwd[tuple(edge)] = False
        edge[j] = 0
        mbwd[tuple(edge)] = False
        g = np.where(mfwd & mbwd, (fwd - bwd) / (2 * h),
                     np.where(mfwd, (fwd - full) / h,
                              np.where(mbwd, (full - bwd) / h, 0.0)))
        grad[:, j] = g[grid.mask]
    return grad


def improve_policy(grad_psi, B, box: ControlBox, channel: int = 0) -> PolicyField:
    """Componentwise bang-bang maximiser of ``<B^T grad psi, u>`` over the box.

    Ties (``|.| <= 1e-12``) take the box midpoint.
    """
    s = np.asarray(grad_psi, dtype=float) @ np.atleast_2d(B)
    u = np.where(s > TIE_TOL, box.upper,
                 np.where(s < -TIE_TOL, box.lower, box.midpoint))
    return PolicyField(channel, u)


def _safeguard(prob: ChannelProblem, old: PolicyField, new: PolicyField,
               pair: EigenPair) -> PolicyField:
    """Keep the old control wherever the new one would raise ``(L psi)_k``.

    The central-difference gradient can disagree in sign with the upwind
    differences at the eigenfunction peak. Rejecting those nodes gives
    ``L_new psi <= lam psi`` row by row, so the next principal eigenvalue
    cannot exceed ``lam`` (Collatz-Wielandt bound for M-matrices).
    """
    psi = pair.psi
    r_old = assemble_channel_operator(prob, old).L @ psi
    r_new = assemble_channel_operator(prob, new).L @ psi
    worse = r_new > r_old + 1e-12 * np.abs(r_old).max()
    if not worse.any():
        return new
    vals = np.where(worse[:, None], old.values, new.values)
    return PolicyField(prob.channel, vals)


def policy_iteration(prob: ChannelProblem, tol: float = 1e-9,
                     max_sweeps: int = 50) -> HjbSolution:
    """Alternate eigen-solve and policy improvement from the box midpoint."""
    policy = PolicyField.constant(prob.channel, prob.grid, prob.box.midpoint)
    best = None
    trace = []
    converged = False
    for _ in range(max_sweeps):
        pair = principal_eigenpair(assemble_channel_operator(prob, policy))
        trace.append(pair.lam)
        if best is not None and pair.lam > best[0].lam * (1 + 10 * tol):
            raise ConventionError(
                f"channel {prob.channel}: eigenvalue rose from {best[0].lam:.12g} "
                f"to {pair.lam:.12g} after policy improvement")
        if best is None or pair.lam <= best[0].lam:
            prev = best
            best = (pair, policy)
            if prev is not None and prev[0].lam - pair.lam < tol * prev[0].lam:
                converged = True
                break
        new = improve_policy(grid_gradient(prob.grid, pair.psi), prob.B, prob.box,
                             prob.channel)
        new = _safeguard(prob, policy, new, pair)
        if np.array_equal(new.values, policy.values):
            converged = True
            break
        policy = new
    return HjbSolution(best[0], best[1], trace, converged)


def rate_vector(system: MultiChannelSystem, feedbacks: FeedbackTuple,
                controls: ControlSpec, diffusion: DiffusionSpec, eps: float,
                grid: OperatorGrid, tol: float = 1e-9) -> tuple[np.ndarray, list[HjbSolution]]:
    """Optimal exit rate of every channel with the other feedbacks frozen."""
    feedbacks.check_against(system)
    controls.check_against(system)
    rates, sols = [], []
    for i in range(system.n_channels):
        prob = ChannelProblem(system, feedbacks, i, controls, diffusion, eps, grid)
        try:
            sol = policy_iteration(prob, tol)
        except Exception as exc:
            raise ChannelError(i, exc) from exc
        rates.append(sol.lam)
        sols.append(sol)
    return np.array(rates), sols


def write_solution(sol: HjbSolution, grid: OperatorGrid, stem) -> list[str]:
    """JSON summary, policy CSV and eigenfunction CSV; returns the paths."""
    stem = str(stem)
    pts = grid.points
    paths = [f"{stem}.json", f"{stem}_policy.csv", f"{stem}_psi.csv"]
    with open(paths[0], "w") as fh:
        json.dump({"channel": sol.policy.channel, "lambda": sol.lam,
                   "sweeps": sol.sweeps, "converged": sol.converged,
                   "trace": sol.trace}, fh, indent=2)
        fh.write("\n")
    d, r = grid.dim, sol.policy.values.shape[1]
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] + [f"u{k + 1}" for k in range(r)])
        for x, u in zip(pts, sol.policy.values):
            w.writerow([repr(float(t)) for t in x] + [repr(float(t)) for t in u])
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] + ["psi"])
        for x, p in zip(pts, sol.eigen.psi):
            w.writerow([repr(float(t)) for t in x] + [repr(float(p))])
    return paths
