"""
JSON run configuration: parsing and whole-document validation.

Every problem found is reported at once, each tagged with the key path it
came from, so a broken file can be fixed in one pass.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .model import (Ball, Box, ControlBox, ControlSpec, DiffusionSpec, Domain,
                    FeedbackTuple, MultiChannelSystem)

TOP_KEYS = {"system", "feedback_candidates", "domain", "diffusion", "controls",
            "epsilon", "run"}

# run-block keys and their defaults
RUN_DEFAULTS = {
    "resolution": 81,
    "x0": None,
    "candidate": 0,
    "samples": 2000,
    "seed": 0,
    "dt": 1e-3,
    "t_max": 40.0,
    "T_schedule": [2.0, 4.0, 8.0],
    "steps_per_unit": 8.0,
    "action_T": 4.0,
    "action_N": 32,
    "weights": [],
    "dump_psi": False,
    "threads": 1,
    "out": "out",
}


class ConfigError(ValueError):
    def __init__(self, errors: list[dict]):
        self.errors = errors
        super().__init__("; ".join(f"{e['path']}: {e['message']}" for e in errors))


@dataclass
class RunConfig:
    system: MultiChannelSystem
    candidates: list[FeedbackTuple]
    domain: Domain
    diffusion: DiffusionSpec
    controls: ControlSpec | None
    epsilons: list[float]
    run: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def x0(self) -> np.ndarray:
        if self.run["x0"] is not None:
            return np.asarray(self.run["x0"], dtype=float)
        lo, hi = self.domain.bounding_box()
        return (lo + hi) / 2

    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


class _Collector:
    def __init__(self):
        self.errors = []

    def add(self, path, msg):
        self.errors.append({"path": path, "message": msg})

    def guard(self, path, fn, *args):
        try:
            return fn(*args)
        except (ValueError, TypeError) as exc:
            self.add(path, str(exc))
            return None


def _domain(doc, err: _Collector):
    if not isinstance(doc, dict) or len(doc) != 1:
        err.add("domain", 'expected {"box": {...}} or {"ball": {...}}')
        return None
    kind, body = next(iter(doc.items()))
    if kind == "box":
        extra = set(body) - {"lower", "upper"}
        if extra:
            err.add("domain.box", f"unknown keys {sorted(extra)}")
        return err.guard("domain.box", lambda: Box(body["lower"], body["upper"]))
    if kind == "ball":
        extra = set(body) - {"center", "radius"}
        if extra:
            err.add("domain.ball", f"unknown keys {sorted(extra)}")
        return err.guard("domain.ball", lambda: Ball(body["center"], body["radius"]))
    err.add("domain", f"unknown shape {kind!r}")
    return None


def _diffusion(doc, err: _Collector):
    if not isinstance(doc, dict) or "base" not in doc:
        err.add("diffusion", "expected an object with a 'base' matrix")
        return None
    extra = set(doc) - {"base", "modulation"}
    if extra:
        err.add("diffusion", f"unknown keys {sorted(extra)}")
    mod = doc.get("modulation", {"kind": "constant"})
    kind = mod.get("kind", "constant")
    if set(mod) - {"kind", "beta"}:
        err.add("diffusion.modulation", f"unknown keys {sorted(set(mod) - {'kind', 'beta'})}")
    return err.guard("diffusion", lambda: DiffusionSpec(doc["base"], kind, mod.get("beta", 0.0)))


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document.

    Raises :class:`ConfigError` carrying every problem found. JSON syntax
    errors report line and column.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([{"path": "<document>", "line": exc.lineno,
                            "column": exc.colno,
                            "message": f"syntax error: {exc.msg} (line {exc.lineno}, column {exc.colno})"}]) from None
    err = _Collector()
    if not isinstance(doc, dict):
        raise ConfigError([{"path": "<document>", "message": "top level must be an object"}])
    for k in sorted(set(doc) - TOP_KEYS):
        err.add(k, "unknown key")
    for k in ("system", "domain", "diffusion", "epsilon"):
        if k not in doc:
            err.add(k, "missing required key")

    system = None
    sysdoc = doc.get("system", {})
    if isinstance(sysdoc, dict) and "A" in sysdoc and "B" in sysdoc:
        for k in sorted(set(sysdoc) - {"A", "B"}):
            err.add(f"system.{k}", "unknown key")
        A = err.guard("system.A", np.array, sysdoc["A"], float)
        Bs = sysdoc["B"]
        if A is not None and A.ndim == 2 and isinstance(Bs, list) and Bs:
            bad = False
            for i, B in enumerate(Bs):
                Bi = err.guard(f"system.B[{i}]", np.array, B, float)
                if Bi is None or Bi.ndim != 2:
                    err.add(f"system.B[{i}]", "must be a matrix")
                    bad = True
                elif Bi.shape[0] != A.shape[0]:
                    err.add(f"system.B[{i}]",
                            f"channel {i} has {Bi.shape[0]} rows, expected {A.shape[0]}")
                    bad = True
            if not bad:
                system = err.guard("system", MultiChannelSystem, A, tuple(Bs))
        else:
            err.add("system", "A must be a matrix and B a non-empty list of matrices")
    elif "system" in doc:
        err.add("system", "expected keys 'A' and 'B'")

    domain = _domain(doc["domain"], err) if "domain" in doc else None
    diffusion = _diffusion(doc["diffusion"], err) if "diffusion" in doc else None

    eps = doc.get("epsilon")
    epsilons = []
    if eps is not None:
        vals = eps if isinstance(eps, list) else [eps]
        for k, e in enumerate(vals):
            if not isinstance(e, (int, float)) or isinstance(e, bool) or not e > 0:
                err.add("epsilon" if not isinstance(eps, list) else f"epsilon[{k}]",
                        f"epsilon must be a positive number, got {e!r}")
            else:
                epsilons.append(float(e))

    candidates = []
    for k, c in enumerate(doc.get("feedback_candidates", [])):
        fb = err.guard(f"feedback_candidates[{k}]", lambda c=c: FeedbackTuple(tuple(c)))
        if fb is not None and system is not None:
            before = len(err.errors)
            err.guard(f"feedback_candidates[{k}]", fb.check_against, system)
            if len(err.errors) == before:
                candidates.append(fb)
    if system is not None and not candidates and "feedback_candidates" not in doc:
        candidates = [FeedbackTuple.zeros(system)]

    controls = None
    if "controls" in doc:
        boxes = []
        for k, b in enumerate(doc["controls"]):
            bx = err.guard(f"controls[{k}]", lambda b=b: ControlBox(b["lower"], b["upper"]))
            if bx is not None:
                boxes.append(bx)
        controls = ControlSpec(tuple(boxes))
        if system is not None and len(boxes) == len(doc["controls"]):
            err.guard("controls", controls.check_against, system)

    if system is not None:
        for name, obj in (("domain", domain), ("diffusion", diffusion)):
            if obj is not None and obj.dim != system.dim:
                err.add(name, f"dimension {obj.dim} does not match system dimension {system.dim}")

    run = dict(RUN_DEFAULTS)
    rdoc = doc.get("run", {})
    if not isinstance(rdoc, dict):
        err.add("run", "must be an object")
        rdoc = {}
    for k, v in rdoc.items():
        if k not in RUN_DEFAULTS:
            err.add(f"run.{k}", "unknown key")
        else:
            run[k] = v
    for k in ("samples", "action_N", "threads"):
        if not isinstance(run[k], int) or run[k] < 1:
            err.add(f"run.{k}", "must be a positive integer")
    if not isinstance(run["seed"], int) or run["seed"] < 0:
        err.add("run.seed", "must be a non-negative integer")
    for k in ("dt", "t_max", "action_T", "steps_per_unit"):
        if not isinstance(run[k], (int, float)) or not run[k] > 0:
            err.add(f"run.{k}", "must be a positive number")
    res = np.atleast_1d(np.asarray(run["resolution"], dtype=object))
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 3 for v in res):
        err.add("run.resolution", "grid resolution must be an integer >= 3 per axis")
    for k, w in enumerate(run["weights"]):
        if not isinstance(w, list) or not all(isinstance(v, (int, float)) and v > 0 for v in w):
            err.add(f"run.weights[{k}]", "weights must be lists of positive numbers")
        elif system is not None and len(w) != system.n_channels:
            err.add(f"run.weights[{k}]", f"expected {system.n_channels} weights")
    if run["x0"] is not None and system is not None and len(run["x0"]) != system.dim:
        err.add("run.x0", f"expected {system.dim} coordinates")
    if run["candidate"] >= max(1, len(candidates)):
        err.add("run.candidate", "index out of range")

    if err.errors:
        raise ConfigError(err.errors)
    return RunConfig(system, candidates, domain, diffusion, controls, epsilons, run, doc)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def reference_config_text() -> str:
    return resources.files("exitrate").joinpath("data/reference.json").read_text()
