"""
Command-line entry point: ``exitrate <subcommand> --config run.json``.

Each subcommand writes its CSV/JSON outputs into ``--out`` and finishes with
``manifest.json`` listing every file with its SHA-256 digest. Failures print
one JSON object to stderr and exit with a nonzero status; whatever was
written before the failure is still inventoried, with ``"partial": true``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import action, elliptic_eig, hjb, pareto, sde_sim, verify
from .config import ConfigError, RunConfig, parse_config, reference_config_text
from .model import closed_loop

SUBCOMMANDS = ("simulate", "eig", "hjb", "action", "asymptotics", "pareto", "verify")

EXIT_USAGE = 2
EXIT_FAILURE = 1

log = logging.getLogger("exitrate")


class Run:
    """Output directory plus per-operation timings."""

    def __init__(self, cfg: RunConfig, out: Path, threads: int):
        self.cfg, self.out, self.threads = cfg, out, threads
        self.timings: dict[str, float] = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def timed(self, label, fn, *args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        self.timings[label] = self.timings.get(label, 0.0) + time.perf_counter() - t0
        return res

    def pmap(self, fn, items):
        # results come back in input order, so threading never changes outputs
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                return list(ex.map(fn, items))
        return [fn(x) for x in items]

    @property
    def grid(self):
        return elliptic_eig.build_grid(self.cfg.domain, self.cfg.run["resolution"])

    @property
    def candidate(self):
        return self.cfg.candidates[self.cfg.run["candidate"]]


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _tag(e: float) -> str:
    return f"{e:g}".replace(".", "p")


def cmd_simulate(run: Run):
    cfg, r = run.cfg, run.cfg.run
    M = closed_loop(cfg.system, run.candidate)
    for e in cfg.epsilons:
        s = run.timed(f"simulate eps={e:g}", sde_sim.sample_exit_times, M, cfg.diffusion,
                      e, cfg.x0, cfg.domain, r["dt"], r["t_max"], r["samples"], r["seed"])
        sde_sim.write_samples_csv(s, run.path(f"exits_eps{_tag(e)}.csv"))
        sde_sim.write_survival_csv(s, np.linspace(0, r["t_max"], 401),
                                   run.path(f"survival_eps{_tag(e)}.csv"))
        try:
            est = sde_sim.estimate_exit_rate(s)
        except sde_sim.TailStarvedError as exc:
            log.warning("eps=%g: %s", e, exc)
            est = None
        params = {"eps": e, "dt": r["dt"], "t_max": r["t_max"], "samples": r["samples"],
                  "seed": r["seed"], "x0": cfg.x0.tolist(), "closed_loop": M.tolist(),
                  "censored": s.censored_count}
        sde_sim.write_sidecar(run.path(f"simulate_eps{_tag(e)}.json"), params, est)


def cmd_eig(run: Run):
    cfg = run.cfg
    M = closed_loop(cfg.system, run.candidate)
    grid = run.grid

    def one(e):
        op = elliptic_eig.discretize(M, cfg.diffusion, e, grid)
        return e, op, elliptic_eig.principal_eigenpair(op)

    res = run.timed("eig", run.pmap, one, cfg.epsilons)
    rows = []
    for e, op, pair in res:
        chk = elliptic_eig.verify_residual(op, pair)
        rows.append({"eps": e, "lambda": pair.lam, "residual": pair.residual,
                     "iterations": pair.iterations, "residual_ok": chk["ok"]})
        if cfg.run["dump_psi"]:
            elliptic_eig.write_psi_csv(grid, pair.psi, run.path(f"psi_eps{_tag(e)}.csv"))
    _write_json(run.path("eig.json"), {"closed_loop": M.tolist(),
                                        "resolution": cfg.run["resolution"], "results": rows})


def _need_controls(cfg):
    if cfg.controls is None:
        raise ConfigError([{"path": "controls", "message": "required by this subcommand"}])


def cmd_hjb(run: Run):
    cfg = run.cfg
    _need_controls(cfg)
    grid = run.grid

    def one(e):
        return e, hjb.rate_vector(cfg.system, run.candidate, cfg.controls, cfg.diffusion,
                                  e, grid)

    summary = []
    for e, (rates, sols) in run.timed("hjb", run.pmap, one, cfg.epsilons):
        for i, sol in enumerate(sols):
            hjb.write_solution(sol, grid, run.path(f"hjb_eps{_tag(e)}_ch{i + 1}"))
        summary.append({"eps": e, "rates": rates.tolist()})
    _write_json(run.path("hjb_summary.json"), {"results": summary})


def cmd_action(run: Run):
    cfg, r = run.cfg, run.cfg.run
    M = closed_loop(cfg.system, run.candidate)
    est = run.timed("estimate_r", action.estimate_r, cfg.x0, M, cfg.diffusion, cfg.domain,
                    r["T_schedule"], r["steps_per_unit"])
    action.write_table_csv(est, run.path("action_table.csv"))
    T = float(r["T_schedule"][-1])
    N = max(16, int(np.ceil(r["steps_per_unit"] * T)))
    rep = run.timed("minimize_action", action.minimize_action, cfg.x0, T, N, M,
                    cfg.diffusion, cfg.domain)
    action.write_path_csv(rep.path, run.path("action_path.csv"))
    _write_json(run.path("action.json"), {
        "r_hat": est.r, "stabilized": est.stabilized, "value": rep.value,
        "converged": rep.converged, "starts": [list(s) for s in rep.starts]})


def cmd_asymptotics(run: Run):
    cfg, r = run.cfg, run.cfg.run
    _need_controls(cfg)
    best, actions = run.timed("selection", action.minimal_action_selection, cfg.candidates,
                              cfg.system, cfg.x0, r["action_T"], r["action_N"],
                              cfg.diffusion, cfg.domain)
    M = closed_loop(cfg.system, best)
    grid = run.grid
    eps = sorted(cfg.epsilons, reverse=True)

    def one(e):
        lam = elliptic_eig.principal_eigenpair(
            elliptic_eig.discretize(M, cfg.diffusion, e, grid)).lam
        rates, _ = hjb.rate_vector(cfg.system, best, cfg.controls, cfg.diffusion, e, grid)
        return lam, rates

    res = run.timed("eigen+hjb", run.pmap, one, eps)
    lam_cl = [x[0] for x in res]
    lam_ch = np.array([x[1] for x in res])
    fit = action.extrapolate_rate_exponent(zip(eps, lam_cl))
    action.write_fit_json(fit, run.path("fit_closed_loop.json"))
    r_i = []
    for i in range(cfg.system.n_channels):
        fi = action.extrapolate_rate_exponent(zip(eps, lam_ch[:, i]))
        action.write_fit_json(fi, run.path(f"fit_channel{i + 1}.json"))
        r_i.append(fi.intercept)
    ok, margin = action.corollary_check(fit.intercept, r_i)
    _write_json(run.path("asymptotics.json"), {
        "selected_candidate": cfg.candidates.index(best), "actions": actions,
        "r_star": fit.intercept, "r_channels": r_i, "margin": margin, "holds": ok})


def cmd_pareto(run: Run):
    cfg = run.cfg
    _need_controls(cfg)
    grid = run.grid
    labels = [f"c{k}" for k in range(len(cfg.candidates))]
    e = min(cfg.epsilons)
    recs = run.timed("sweep", pareto.sweep, cfg.system, cfg.candidates, cfg.controls,
                     cfg.diffusion, e, grid, cfg.domain, run.threads, labels)
    flagged, front = pareto.pareto_front(recs)
    pareto.write_records_csv(flagged, run.path("pareto_records.csv"))
    pareto.write_records_csv(front, run.path("pareto_front.csv"))
    weights = cfg.run["weights"] or [[1.0] * cfg.system.n_channels]
    pareto.write_scalarization_csv(flagged, weights, run.path("scalarization.csv"))
    _write_json(run.path("pareto.json"), {"eps": e, "records": [
        {"candidate": rec.label, "rates": rec.rates.tolist(), "dominated": rec.dominated,
         "channels": rec.provenance} for rec in flagged]})


def cmd_verify(run: Run):
    seed = run.cfg.run["seed"]
    results = []
    for cid, name, _ in verify.CHECKS:
        res = verify.run_check(cid, seed, run.cfg)
        run.timings[f"check {cid}"] = res.seconds
        print(res.line(), file=sys.stderr)
        results.append(res)
    _write_json(run.path("verify.json"), {"seed": seed, "checks": [
        {"id": r.id, "name": r.name, "passed": r.passed, "details": r.details}
        for r in results]})
    with open(run.path("verify_summary.csv"), "w", newline="") as fh:
        fh.write("id,name,passed\r\n")
        for r in results:
            fh.write(f"{r.id},{r.name},{int(r.passed)}\r\n")
    run.budget_ok = {str(r.id): r.within_budget for r in results}
    failed = [r.id for r in results if not r.passed]
    if failed:
        raise RuntimeError(f"acceptance checks failed: {failed}")


HANDLERS = {"simulate": cmd_simulate, "eig": cmd_eig, "hjb": cmd_hjb, "action": cmd_action,
            "asymptotics": cmd_asymptotics, "pareto": cmd_pareto, "verify": cmd_verify}


def file_inventory(out: Path) -> list[dict]:
    files = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files.append({"path": p.relative_to(out).as_posix(), "bytes": p.stat().st_size,
                          "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
    return files


def write_manifest(run: Run, subcommand: str, partial: bool, error=None) -> dict:
    man = {"subcommand": subcommand, "version": __version__,
           "config_sha256": run.cfg.digest(), "seed": run.cfg.run["seed"],
           "partial": partial, "timings": run.timings,
           "files": file_inventory(run.out)}
    if getattr(run, "budget_ok", None) is not None:
        man["within_budget"] = run.budget_ok
    if error is not None:
        man["error"] = error
    _write_json(run.out / "manifest.json", man)
    return man


def run(cfg: RunConfig, subcommand: str, out=None, threads: int = 1) -> dict:
    """Execute one subcommand and return the manifest.

    Raises whatever the module raised after writing a partial manifest.
    """
    if subcommand not in HANDLERS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out = Path(out if out is not None else cfg.run["out"])
    out.mkdir(parents=True, exist_ok=True)
    r = Run(cfg, out, threads)
    try:
        HANDLERS[subcommand](r)
    except Exception as exc:
        write_manifest(r, subcommand, True, _error_doc(exc))
        raise
    return write_manifest(r, subcommand, False)


def _error_doc(exc: Exception) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        doc["details"] = exc.errors
    if isinstance(exc, hjb.ChannelError):
        doc["channel"] = exc.channel
    return doc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        json.dump({"error": "UsageError", "message": message}, sys.stderr)
        sys.stderr.write("\n")
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="exitrate", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration "
                       + ("(default: bundled reference)" if name == "verify" else ""),
                       required=name != "verify")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--epsilon", type=float, nargs="+")
    return p


def _load(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else reference_config_text()
    if args.seed is None and not args.epsilon and not args.out:
        return parse_config(text)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return parse_config(text)      # raises with line and column
    if isinstance(doc, dict):
        # scalar overrides go through the same validation as the file itself
        run_block = doc.setdefault("run", {})
        if args.seed is not None:
            run_block["seed"] = args.seed
        if args.out:
            run_block["out"] = args.out
        if args.epsilon:
            doc["epsilon"] = args.epsilon if len(args.epsilon) > 1 else args.epsilon[0]
        text = json.dumps(doc)
    return parse_config(text)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        json.dump(_error_doc(exc), sys.stderr)
        sys.stderr.write("\n")
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_USAGE
    if args.threads < 1:
        json.dump({"error": "UsageError", "message": "--threads must be >= 1"}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_USAGE
    try:
        run(cfg, args.subcommand, cfg.run["out"], args.threads)
    except Exception as exc:
        json.dump(_error_doc(exc), sys.stderr, default=_jsonable)
        sys.stderr.write("\n")
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
