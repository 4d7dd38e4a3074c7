"""
Rate-vector dominance, Pareto fronts and weighted-sum scalarisation.

Smaller exit rates are better: ``a`` dominates ``b`` when it is no larger in
every channel and strictly smaller in at least one.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .elliptic_eig import OperatorGrid
from .flow import estimate_invariant_set
from .hjb import rate_vector
from .model import (ControlSpec, DiffusionSpec, Domain, FeedbackTuple,
                    MultiChannelSystem, StructuralError, closed_loop)

log = logging.getLogger(__name__)


class EmptyCandidateSetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ParetoRecord:
    candidate: FeedbackTuple | None
    rates: np.ndarray
    dominated: bool = False
    provenance: list = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if not np.all(np.isfinite(r) & (r > 0)):
            raise ValueError(f"rates must be positive and finite, got {r}")
        object.__setattr__(self, "rates", r)


def normalize_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or not np.all(w > 0):
        raise ValueError("weights must be strictly positive")
    return w / w.sum()


def dominates(a, b) -> bool:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise StructuralError(f"rate vectors of length {a.size} and {b.size}")
    return bool(np.all(a <= b) and np.any(a < b))


def pareto_front(records: list[ParetoRecord]) -> tuple[list[ParetoRecord], list[ParetoRecord]]:
    """Flag dominated records; return (all records with flags, front)."""
    if not records:
        raise ValueError("no records")
    R = np.array([r.rates for r in records])
    le = np.all(R[:, None, :] <= R[None, :, :], axis=2)
    lt = np.any(R[:, None, :] < R[None, :, :], axis=2)
    dom = le & lt                       # dom[i, j]: i dominates j
    flagged = [replace(r, dominated=bool(dom[:, k].any())) for k, r in enumerate(records)]
    return flagged, [r for r in flagged if not r.dominated]


def scalarize(records: list[ParetoRecord], weights) -> tuple[int, float]:
    """Index and utility of the record minimising ``<w, rates>`` (first wins ties)."""
    w = normalize_weights(weights)
    u = np.array([w @ r.rates for r in records])
    k = int(np.argmin(u))
    return k, float(u[k])


def admissible(system: MultiChannelSystem, fb: FeedbackTuple, D: Domain,
               resolution: int = 21) -> tuple[bool, str]:
    est = estimate_invariant_set(closed_loop(system, fb), D, resolution)
    if est.nonempty:
        return True, ""
    return False, "closed loop has no invariant set in the domain"


def sweep(system: MultiChannelSystem, candidates, controls: ControlSpec,
          diffusion: DiffusionSpec, eps: float, grid: OperatorGrid, D: Domain,
          threads: int = 1, labels=None) -> list[ParetoRecord]:
    """Rate vector for every candidate that passes the invariant-set check."""
    if not candidates:
        raise EmptyCandidateSetError("no feedback candidates given")
    labels = labels or [f"c{k}" for k in range(len(candidates))]
    keep = []
    for lab, fb in zip(labels, candidates):
        ok, why = admissible(system, fb, D)
        if ok:
            keep.append((lab, fb))
        else:
            log.warning("candidate %s excluded: %s", lab, why)
    if not keep:
        raise EmptyCandidateSetError(
            "every candidate failed the invariant-set check (empty feedback class)")

    def one(item):
        lab, fb = item
        rates, sols = rate_vector(system, fb, controls, diffusion, eps, grid)
        prov = [{"channel": i, "lambda": s.lam, "sweeps": s.sweeps,
                 "converged": s.converged} for i, s in enumerate(sols)]
        return ParetoRecord(fb, rates, provenance=prov, label=lab)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, keep))
    return [one(k) for k in keep]


def write_records_csv(records: list[ParetoRecord], path) -> None:
    n = records[0].rates.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate"] + [f"lambda_{i + 1}" for i in range(n)] + ["dominated"])
        for r in records:
            w.writerow([r.label] + [repr(float(v)) for v in r.rates] + [int(r.dominated)])


def write_scalarization_csv(records: list[ParetoRecord], weights_list, path) -> None:
    n = records[0].rates.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"w{i + 1}" for i in range(n)] + ["candidate", "utility"])
        for wt in weights_list:
            k, u = scalarize(records, wt)
            w.writerow([repr(float(v)) for v in normalize_weights(wt)]
                       + [records[k].label, repr(u)])
