"""Command-line front end.

Exit status: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import tomli_w

from . import fixtures, kernels
from .errors import PatternMismatch, SteeringFailure, StrategyFailure, TrackerAbort, TridiagonalError
from .grid import l2_norm
from .profiles import build, uniform_bound_check
from .scenario import ConfigError, Scenario, load, load_text
from .solver import ControlSchedule, SolverConfig, solve
from .steering import amplification_check, steer
from .strategy import audit, run
from .tracker import extract_pattern, track_during_solve

log = logging.getLogger("nodalsteer")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
RUNTIME_ERRORS = (StrategyFailure, SteeringFailure, TrackerAbort, TridiagonalError,
                  PatternMismatch, ArithmeticError, RuntimeError, ValueError)


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def _header(sc: Scenario, command: str) -> dict:
    return {"scenario": sc.name, "command": command, "seed": sc.seed,
            "n_cells": sc.grid.n_cells, "nonlinearity": sc.nonlinearity.to_dict(),
            "backend": kernels.BACKEND}


# --- subcommands -----------------------------------------------------------------

def cmd_simulate(sc: Scenario, out: Path) -> int:
    u0, u_star = sc.initial_state(), sc.target_state()
    summary = _header(sc, "simulate")
    summary["strategy"] = sc.strategy.to_dict()
    try:
        _, trace = run(u0, u_star, sc.strategy, sc.nonlinearity, log=log.debug)
    except StrategyFailure as exc:
        if exc.trace is not None:
            _write(out, "trace.csv", exc.trace.to_csv())
            _write(out, "curves.dat", exc.trace.curves_dat())
            summary["run"] = exc.trace.summary()
        summary["status"] = "failed"
        summary["error"] = str(exc)
        _write(out, "summary.json", _json(summary))
        _write(out, "failure.json", _json({"error": str(exc), "type": type(exc).__name__}))
        log.error("run failed: %s", exc)
        return EXIT_RUNTIME
    au = audit(trace, sc.strategy)
    summary["run"] = trace.summary()
    summary["audit"] = au.to_dict()
    summary["final_l2_error"] = trace.final["final_l2_error"]
    summary["max_zero_error"] = trace.final["max_zero_error"]
    summary["rounds"] = len(trace.rounds)
    ok = trace.final["final_l2_error"] <= sc.strategy.eta and au.ok
    summary["status"] = "ok" if ok else "audit-failed"
    _write(out, "trace.csv", trace.to_csv())
    _write(out, "curves.dat", trace.curves_dat())
    _write(out, "summary.json", _json(summary))
    print(f"{sc.name}: rounds={len(trace.rounds)} final_l2_error={trace.final['final_l2_error']:.4g} "
          f"max_zero_error={trace.final['max_zero_error']:.3g} status={summary['status']}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_steer(sc: Scenario, out: Path) -> int:
    cfg = sc.section("steer")
    eta = float(cfg.get("eta", sc.strategy.eta))
    u_in = sc.initial_state()
    base = sc.initial.unperturbed().sample(sc.grid)
    u_bar = sc.target_state()
    final, rep, pl = steer(u_in, u_bar, eta, sc.nonlinearity, u_in=base,
                           t_initial=float(cfg.get("t_initial", 1e-2)),
                           t_min=float(cfg.get("t_min", 1e-6)))
    amp = amplification_check(base, pl, sc.nonlinearity)
    report = _header(sc, "steer") | rep.to_dict()
    report["amplification"] = amp.__dict__
    _write(out, "report.json", _json(report))
    _write(out, "state.csv", final.to_csv())
    print(f"K={rep.K:.6g} m={rep.m:.6g} error={rep.achieved_error:.4g} bound={rep.bound:.4g} "
          f"slack={rep.slack:.4g}")
    return EXIT_OK if rep.slack >= 0 else EXIT_RUNTIME


def cmd_diffuse(sc: Scenario, out: Path) -> int:
    cfg = sc.section("diffuse")
    T = float(cfg.get("T", 0.1))
    dt = float(cfg.get("dt", 1e-4))
    u = sc.initial_state()
    base = sc.initial.unperturbed().sample(sc.grid)
    sched = ControlSchedule.free(sc.grid, 0.0, T)
    obs = {"l2_norm": lambda t, s: l2_norm(s)}
    res = solve(u, sched, sc.nonlinearity, SolverConfig(dt_max=dt), observers=obs)
    ref = solve(base, sched, sc.nonlinearity, SolverConfig(dt_max=dt), observers=obs)
    diff = l2_norm(res.state - ref.state)
    p_norm = l2_norm(u - base)
    gron = math.exp(sc.nonlinearity.lipschitz_L * T) * p_norm
    _write(out, "diffuse.csv", res.to_csv())
    _write(out, "state.csv", res.state.to_csv())
    summary = _header(sc, "diffuse") | {
        "T": T, "dt": dt, "final_l2_norm": l2_norm(res.state),
        "perturbation_norm": p_norm, "difference_norm": diff, "gronwall_bound": gron,
        "gronwall_holds": diff <= gron * 1.01 + 1e-15}
    _write(out, "summary.json", _json(summary))
    print(f"final ||u||={summary['final_l2_norm']:.6g} difference={diff:.4g} bound={gron:.4g}")
    return EXIT_OK if summary["gronwall_holds"] else EXIT_RUNTIME


def cmd_build_profile(sc: Scenario, out: Path) -> int:
    from .scenario import FieldSpec, profile_to_toml
    raw = sc.section("profile") or sc.raw.get("target") or sc.raw.get("initial")
    if not raw or "zeros" not in raw:
        raise ConfigError("build-profile needs a [profile] table with 'zeros'")
    spec = FieldSpec.from_dict(raw, "profile").profile
    try:
        w = build(spec, sc.grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    b = uniform_bound_check(spec, sc.grid)
    pat = extract_pattern(w)
    _write(out, "profile.csv", w.to_csv())
    _write(out, "profile.toml", profile_to_toml(spec))
    _write(out, "summary.json", _json(_header(sc, "build-profile") | {
        "profile": spec.to_dict(), "sup": b.sup, "sup_d1": b.sup_d1, "sup_d2": b.sup_d2,
        "zeros_found": list(pat.interior_zeros), "lambda": pat.lam}))
    print(f"zeros={list(pat.interior_zeros)} sup={b.sup:.6g} sup|w'|={b.sup_d1:.6g} sup|w''|={b.sup_d2:.6g}")
    return EXIT_OK


def cmd_track(sc: Scenario, out: Path) -> int:
    cfg = sc.section("track")
    name = cfg.get("fixture")
    if name == "two-mode":
        u0 = fixtures.sample_fixture("two-mode", sc.grid)
        T = float(cfg.get("T", 0.9 * fixtures.two_mode_exit_time()))
    elif name is None:
        u0 = sc.initial_state()
        T = float(cfg.get("T", 0.01))
    else:
        if name not in fixtures.FIXTURES:
            raise ConfigError(f"unknown fixture {name!r}")
        u0 = fixtures.sample_fixture(name, sc.grid, **{k: v for k, v in cfg.items()
                                                        if k not in ("fixture", "T", "dt", "targets")})
        T = float(cfg.get("T", 0.01))
    dt = float(cfg.get("dt", 1e-5))
    targets = cfg.get("targets")
    res = track_during_solve(u0, (0.0, T), sc.nonlinearity, targets=targets,
                             cfg=SolverConfig(dt_max=dt))
    tr = res.trace
    t = np.array(tr.times)
    p = tr.array()
    cols = [f"xi_{l + 1}" for l in range(tr.n)]
    summary = _header(sc, "track") | {"T": T, "dt": dt, "records": len(t), "reason": res.reason}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    exact = fixtures.two_mode_zero(t) if name == "two-mode" else None
    w.writerow(["t", *cols, *(["xi_exact"] if exact is not None else [])])
    for j in range(len(t)):
        w.writerow([f"{t[j]:.17g}", *(f"{v:.17g}" for v in p[j]),
                    *([f"{exact[j]:.17g}"] if exact is not None else [])])
    _write(out, "curves.csv", buf.getvalue())
    dat = io.StringIO()
    dat.write("# t " + " ".join(cols) + (" xi_exact" if exact is not None else "") + "\n")
    for j in range(len(t)):
        dat.write(f"{t[j]:.10e} " + " ".join(f"{v:.10e}" for v in p[j])
                  + (f" {exact[j]:.10e}" if exact is not None else "") + "\n")
    _write(out, "curves.dat", dat.getvalue())
    if res.event is not None:
        summary["event"] = {"index": res.event.index, "time": res.event.time,
                            "position": res.event.position}
    if exact is not None:
        gap = float(np.max(np.abs(p[:, 0] - exact)))
        summary["max_gap_to_closed_form"] = gap
        print(f"max |xi_num - xi_exact| = {gap:.3e}")
    _write(out, "summary.json", _json(summary))
    return EXIT_OK


# --- sweep -------------------------------------------------------------------------

def sweep_cells(sc: Scenario, extra_axes: list[str] | None = None) -> tuple[list[str], list[tuple]]:
    axes = dict(sc.section("sweep"))
    for spec in extra_axes or []:
        key, _, vals = spec.partition("=")
        if not vals:
            raise ConfigError(f"bad --axis {spec!r}; expected key=v1,v2")
        axes[key] = [json.loads(v) for v in vals.split(",")]
    if not axes or any(not isinstance(v, list) or not v for v in axes.values()):
        raise ConfigError("sweep grid is empty: give [sweep] key = [values, ...]")
    keys = sorted(axes)
    return keys, list(itertools.product(*(axes[k] for k in keys)))


def _run_cell(args):
    raw_text, keys, values, seed, out = args
    overrides = dict(zip(keys, values))
    try:
        sc = load_text(raw_text, seed, overrides)
        code = cmd_simulate(sc, Path(out))
    except ConfigError as exc:
        return EXIT_CONFIG, {"error": str(exc)}
    except RUNTIME_ERRORS as exc:
        return EXIT_RUNTIME, {"error": str(exc)}
    summ = json.loads((Path(out) / "summary.json").read_text())
    return code, summ


def cmd_sweep(sc: Scenario, out: Path, axes: list[str] | None = None, jobs: int = 1) -> int:
    keys, cells = sweep_cells(sc, axes)
    text = tomli_w.dumps({k: v for k, v in sc.raw.items() if k != "sweep"})
    tasks = [(text, keys, vals, sc.seed, str(out / f"cell_{i:03d}")) for i, vals in enumerate(cells)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", *keys, "exit_code", "status", "final_l2_error", "max_zero_error", "rounds"])
    for i, (vals, (code, summ)) in enumerate(zip(cells, results)):
        w.writerow([i, *vals, code, summ.get("status", "error"),
                    summ.get("final_l2_error", ""), summ.get("max_zero_error", ""), summ.get("rounds", "")])
    _write(out, "sweep.csv", buf.getvalue())
    failed = sum(code != EXIT_OK for code, _ in results)
    print(f"sweep: {len(cells)} cells, {failed} failed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


# --- entry point -------------------------------------------------------------------

COMMANDS = ("simulate", "steer", "diffuse", "build-profile", "track", "sweep")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nodalsteer", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="scenario TOML file")
    ap.add_argument("--out", help="output directory (default: out/<scenario name>)")
    ap.add_argument("--seed", type=int, default=None, help="seed for perturbations (default: config or 0)")
    ap.add_argument("--axis", action="append", help="extra sweep axis key=v1,v2 (sweep only)")
    ap.add_argument("--jobs", type=int, default=1, help="concurrent sweep cells")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        sc = load(args.config, args.seed)
        out = Path(args.out or sc.output_dir or Path("out") / sc.name)
        if args.command == "simulate":
            return cmd_simulate(sc, out)
        if args.command == "steer":
            return cmd_steer(sc, out)
        if args.command == "diffuse":
            return cmd_diffuse(sc, out)
        if args.command == "build-profile":
            return cmd_build_profile(sc, out)
        if args.command == "track":
            return cmd_track(sc, out)
        return cmd_sweep(sc, out, args.axis, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RUNTIME_ERRORS as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
