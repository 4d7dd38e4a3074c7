"""
Plant, feedback, domain, noise and control-set types.

Everything here is immutable after construction and validated on the way in,
so downstream modules can assume well-formed inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class StructuralError(ValueError):
    """Shapes or dimensions do not fit together."""


class EllipticityError(ValueError):
    """The diffusion matrix is not uniformly elliptic."""


def _matrix(m, name: str) -> np.ndarray:
    a = np.array(m, dtype=float)
    if a.ndim == 1 and a.size == 0:
        raise StructuralError(f"{name} is empty")
    if a.ndim != 2:
        raise StructuralError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StructuralError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


def _vector(v, name: str) -> np.ndarray:
    a = np.atleast_1d(np.array(v, dtype=float))
    if a.ndim != 1:
        raise StructuralError(f"{name} must be a vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StructuralError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MultiChannelSystem:
    """Linear plant ``x' = A x + sum_i B_i u_i`` with ``n`` input channels."""

    A: np.ndarray
    channels: tuple[np.ndarray, ...]

    def __post_init__(self):
        A = _matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise StructuralError(f"A must be square, got {A.shape}")
        if len(self.channels) < 1:
            raise StructuralError("at least one input channel is required")
        chans = []
        for i, B in enumerate(self.channels):
            B = _matrix(B, f"B[{i}]")
            if B.shape[0] != A.shape[0]:
                raise StructuralError(
                    f"channel {i}: B has {B.shape[0]} rows, expected {A.shape[0]}")
            chans.append(B)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "channels", tuple(chans))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def input_dims(self) -> list[int]:
        return [B.shape[1] for B in self.channels]


@dataclass(frozen=True, eq=False)
class FeedbackTuple:
    """State-feedback gains ``(gamma_1, ..., gamma_n)``, gamma_i of shape r_i x d."""

    gains: tuple[np.ndarray, ...]

    def __post_init__(self):
        gains = tuple(_matrix(g, f"gamma[{i}]") for i, g in enumerate(self.gains))
        object.__setattr__(self, "gains", gains)

    def __len__(self):
        return len(self.gains)

    def check_against(self, system: MultiChannelSystem) -> None:
        if len(self.gains) != system.n_channels:
            raise StructuralError(
                f"feedback has {len(self.gains)} gains, system has "
                f"{system.n_channels} channels")
        for i, (g, B) in enumerate(zip(self.gains, system.channels)):
            if g.shape != (B.shape[1], system.dim):
                raise StructuralError(
                    f"channel {i}: gain shape {g.shape}, expected "
                    f"{(B.shape[1], system.dim)}")

    @classmethod
    def zeros(cls, system: MultiChannelSystem) -> "FeedbackTuple":
        return cls(tuple(np.zeros((B.shape[1], system.dim)) for B in system.channels))


def closed_loop(system: MultiChannelSystem, feedbacks: FeedbackTuple,
                skip: int | None = None) -> np.ndarray:
    """Return ``A + sum_i B_i gamma_i``.

    ``skip`` leaves one channel open, which gives the frozen part of a
    per-channel problem.
    """
    feedbacks.check_against(system)
    M = system.A.copy()
    for i, (B, g) in enumerate(zip(system.channels, feedbacks.gains)):
        if i != skip:
            M += B @ g
    return M


class Domain:
    """Bounded open set with exact membership and signed distance.

    Signed distance is negative inside, zero on the boundary, positive outside.
    Point arguments may be a single d-vector or an (m, d) array.
    """

    dim: int

    def signed_distance(self, x) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x) -> np.ndarray:
        """Membership in the open set."""
        return self.signed_distance(x) < 0

    def contains_closure(self, x, tol: float = 0.0) -> np.ndarray:
        return self.signed_distance(x) <= tol

    def project(self, x) -> np.ndarray:
        """Nearest point of the closure."""
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def line_interval(self, v) -> tuple[float, float] | None:
        """Range of scalars ``t`` with ``t*v`` in the closure, or None."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(Domain):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _vector(self.lower, "box.lower"), _vector(self.upper, "box.upper")
        if lo.shape != hi.shape:
            raise StructuralError("box bounds have different lengths")
        if not np.all(hi > lo):
            raise StructuralError("box must have upper > lower on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        c = (self.lower + self.upper) / 2
        half = (self.upper - self.lower) / 2
        q = np.abs(x - c) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def bounding_box(self):
        return self.lower.copy(), self.upper.copy()

    def line_interval(self, v):
        v = np.asarray(v, dtype=float)
        lo, hi = -np.inf, np.inf
        for vj, a, b in zip(v, self.lower, self.upper):
            if abs(vj) < 1e-300:
                if not a <= 0.0 <= b:
                    return None
                continue
            t1, t2 = sorted((a / vj, b / vj))
            lo, hi = max(lo, t1), min(hi, t2)
        return (lo, hi) if lo <= hi else None


@dataclass(frozen=True, eq=False)
class Ball(Domain):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vector(self.center, "ball.center"))
        r = float(self.radius)
        if not (np.isfinite(r) and r > 0):
            raise StructuralError("ball radius must be positive")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.size

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def project(self, x):
        x = np.asarray(x, dtype=float)
        off = x - self.center
        nrm = np.linalg.norm(off, axis=-1, keepdims=True)
        scale = np.where(nrm > self.radius, self.radius / np.maximum(nrm, 1e-300), 1.0)
        return self.center + off * scale

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def line_interval(self, v):
        # |t v - c|^2 <= r^2
        v = np.asarray(v, dtype=float)
        a = v @ v
        if a == 0:
            return (-np.inf, np.inf) if self.center @ self.center <= self.radius**2 else None
        b = -2 * (v @ self.center)
        c = self.center @ self.center - self.radius**2
        disc = b * b - 4 * a * c
        if disc < 0:
            return None
        s = np.sqrt(disc)
        return ((-b - s) / (2 * a), (-b + s) / (2 * a))


MODULATIONS = ("constant", "saturating")


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Noise matrix ``sigma(x) = m(x) * base``.

    ``m`` is either identically 1 (``"constant"``) or the saturating profile
    ``1 + beta |x|^2 / (1 + |x|^2)`` with ``beta > -1``.
    """

    base: np.ndarray
    modulation: str = "constant"
    beta: float = 0.0
    kappa: float = field(init=False, default=0.0)

    def __post_init__(self):
        base = _matrix(self.base, "diffusion.base")
        if base.shape[0] != base.shape[1]:
            raise StructuralError(f"diffusion.base must be square, got {base.shape}")
        if self.modulation not in MODULATIONS:
            raise StructuralError(f"unknown modulation {self.modulation!r}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "kappa", validate_diffusion(self))

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    def modulation_inf(self) -> float:
        if self.modulation == "constant" or self.beta >= 0:
            return 1.0
        return 1.0 + self.beta

    def scale(self, x) -> np.ndarray:
        """Scalar modulation m(x) at one point or a batch of points."""
        x = np.asarray(x, dtype=float)
        if self.modulation == "constant":
            return np.ones(x.shape[:-1])
        s = np.sum(x * x, axis=-1)
        return 1.0 + self.beta * s / (1.0 + s)

    def scale_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.modulation == "constant":
            return np.zeros_like(x)
        s = np.sum(x * x, axis=-1, keepdims=True)
        return self.beta * 2 * x / (1.0 + s) ** 2

    def sigma(self, x) -> np.ndarray:
        m = self.scale(x)
        return m[..., None, None] * self.base

    def covariance(self, x) -> np.ndarray:
        """``a(x) = sigma(x) sigma(x)^T``."""
        m = self.scale(x)
        return (m * m)[..., None, None] * (self.base @ self.base.T)

    def scaled(self, c: float) -> "DiffusionSpec":
        return DiffusionSpec(c * self.base, self.modulation, self.beta)


def validate_diffusion(spec: DiffusionSpec) -> float:
    """Certified ellipticity bound ``(inf m)^2 * lambda_min(base base^T)``."""
    if spec.modulation == "saturating" and not spec.beta > -1:
        raise EllipticityError(
            f"saturating modulation needs beta > -1, got {spec.beta}")
    lam_min = np.linalg.eigvalsh(spec.base @ spec.base.T)[0]
    kappa = spec.modulation_inf() ** 2 * lam_min
    # a relative floor separates "singular" from merely small
    if not kappa > 1e-14 * max(1.0, np.abs(spec.base).max() ** 2):
        raise EllipticityError(f"sigma sigma^T is singular (kappa = {kappa:g})")
    return float(kappa)


@dataclass(frozen=True, eq=False)
class ControlBox:
    """Admissible control set for one channel: an axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _vector(self.lower, "control.lower"), _vector(self.upper, "control.upper")
        if lo.shape != hi.shape:
            raise StructuralError("control box bounds have different lengths")
        if not np.all(hi >= lo):
            raise StructuralError("control box is empty (upper < lower)")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def midpoint(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def contains(self, u, tol: float = 0.0) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.all((u >= self.lower - tol) & (u <= self.upper + tol), axis=-1)


@dataclass(frozen=True, eq=False)
class ControlSpec:
    boxes: tuple[ControlBox, ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def __getitem__(self, i) -> ControlBox:
        return self.boxes[i]

    def __len__(self):
        return len(self.boxes)

    def check_against(self, system: MultiChannelSystem) -> None:
        if len(self.boxes) != system.n_channels:
            raise StructuralError(
                f"{len(self.boxes)} control boxes for {system.n_channels} channels")
        for i, (box, r) in enumerate(zip(self.boxes, system.input_dims())):
            if box.dim != r:
                raise StructuralError(f"channel {i}: control box has dim {box.dim}, expected {r}")


@dataclass(frozen=True)
class NoiseLevel:
    epsilon: float
    epsilon_max: float = float("inf")

    def __post_init__(self):
        if not (0 < self.epsilon < self.epsilon_max):
            raise StructuralError(
                f"epsilon must lie in (0, {self.epsilon_max}), got {self.epsilon}")


def as_feedback(gains: Sequence) -> FeedbackTuple:
    return gains if isinstance(gains, FeedbackTuple) else FeedbackTuple(tuple(gains))
