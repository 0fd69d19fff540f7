"""Command-line entry point: run, sweep, validate, oracle-compare, report."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, capacity, config as config_mod, oracle, simulate
from .model import ConfigurationError, InvariantViolation

log = logging.getLogger("htq")

BASE_COLUMNS = [
    "system", "policy", "epsilon", "source", "replication", "slots",
    "scaled_mean", "scaled_mean_ci_lo", "scaled_mean_ci_hi", "predicted_mean",
    "perp_sq_scaled", "unused_mean", "unused_identity_residual", "ks_stat", "seed",
]

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_INVARIANT, EXIT_CRP = 0, 1, 2, 3, 4


def theta_label(theta: float) -> str:
    return format(float(theta), "g")


def columns(theta_grid: Sequence[float]) -> list[str]:
    cols = list(BASE_COLUMNS)
    for th in theta_grid:
        cols += [f"mgf_theta_{theta_label(th)}", f"mgf_ref_theta_{theta_label(th)}"]
    return cols


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if not math.isfinite(x) else repr(float(x))
    return str(x)


@dataclass
class PointResult:
    """One (epsilon, replication) outcome, small enough to ship between processes."""

    epsilon: float
    replication: int
    row: dict
    point: Optional[analysis.SweepPoint] = None
    identity_covers: Optional[bool] = None
    residual_covers: dict = field(default_factory=dict)
    unused_sq_bound: Optional[tuple] = None  # (eps^2 * CI low end of E[(sum u)^2], eps^3 n S_max)
    violation: Optional[str] = None
    error: Optional[str] = None
    extra: dict = field(default_factory=dict)


def _mgf_cells(row, mgf: dict, pred: analysis.HTPrediction, scale: float, thetas):
    for th in thetas:
        row[f"mgf_theta_{theta_label(th)}"] = mgf.get(th)
        try:
            row[f"mgf_ref_theta_{theta_label(th)}"] = analysis.exponential_reference(pred.limit_mean, th * scale)
        except ValueError:
            row[f"mgf_ref_theta_{theta_label(th)}"] = None


def sim_point(cfg: config_mod.ExperimentConfig, epsilon: float, replication: int, seed: int) -> PointResult:
    try:
        system = cfg.build_system(epsilon)
        pred = cfg.prediction()
        est = simulate.run(system, cfg.sim_config(epsilon, seed, replication))
    except InvariantViolation as exc:
        return PointResult(epsilon, replication, {}, violation=str(exc))
    except Exception as exc:  # reported per point, the sweep continues
        return PointResult(epsilon, replication, {}, error=f"{type(exc).__name__}: {exc}")
    pt = analysis.sweep_point(est, system.c, system.direction, pred)
    scale = pt.scale
    ci = est.scaled_parallel_mean
    unused = est.unused_sum_mean if system.kind in ("single", "lb") else est.unused_weighted_mean
    row = {
        "system": cfg.name, "policy": system.policy, "epsilon": epsilon, "source": "sim",
        "replication": replication, "slots": est.slots,
        "scaled_mean": pt.scaled_mean, "scaled_mean_ci_lo": ci.lo / scale, "scaled_mean_ci_hi": ci.hi / scale,
        "predicted_mean": pred.limit_mean, "perp_sq_scaled": est.perp_sq_scaled,
        "unused_mean": unused.mean, "unused_identity_residual": est.unused_identity.mean - epsilon,
        "ks_stat": pt.ks, "seed": seed,
    }
    _mgf_cells(row, pt.mgf, pred, scale, cfg.theta_grid)
    bound = None
    if system.kind in ("single", "lb"):
        bound = (epsilon**2 * est.unused_sum_sq_mean.lo, epsilon**3 * system.n * system.s_max)
    return PointResult(
        epsilon, replication, row, point=pt,
        identity_covers=est.unused_identity.covers(epsilon),
        residual_covers={th: e.covers(0.0) for th, e in est.residual.items()},
        unused_sq_bound=bound,
        extra={"estimates": {
            "scaled_mean": asdict(ci), "unused_identity": asdict(est.unused_identity),
            "mgf": {th: asdict(e) for th, e in est.mgf.items()},
            "residual": {th: asdict(e) for th, e in est.residual.items()},
            "unused_sum": asdict(est.unused_sum_mean),
        }},
    )


def oracle_point(cfg: config_mod.ExperimentConfig, epsilon: float) -> PointResult:
    try:
        system = cfg.build_system(epsilon)
        pred = cfg.prediction()
        chain = oracle.build_and_solve(system, int(cfg.oracle["q_cap"]), float(cfg.oracle["boundary_threshold"]))
        ex = oracle.exact_moments(chain, theta_grid=cfg.theta_grid)
    except Exception as exc:
        return PointResult(epsilon, 0, {}, error=f"{type(exc).__name__}: {exc}")
    pt = analysis.sweep_point(ex, system.c, system.direction, pred)
    unused = ex.unused_sum_mean if system.kind in ("single", "lb") else ex.unused_weighted_mean
    row = {
        "system": cfg.name, "policy": system.policy, "epsilon": epsilon, "source": "oracle",
        "replication": 0, "slots": None,
        "scaled_mean": pt.scaled_mean, "scaled_mean_ci_lo": None, "scaled_mean_ci_hi": None,
        "predicted_mean": pred.limit_mean, "perp_sq_scaled": epsilon**2 * ex.perp_sq,
        "unused_mean": unused, "unused_identity_residual": ex.unused_identity - epsilon,
        "ks_stat": pt.ks, "seed": None,
    }
    _mgf_cells(row, pt.mgf, pred, pt.scale, cfg.theta_grid)
    return PointResult(
        epsilon, 0, row, point=pt,
        extra={"boundary_mass": chain.boundary_mass, "truncated": chain.truncation_warning,
               "balance_residual": chain.balance_residual, "scaled_mean_raw": ex.scaled_mean,
               "unused_identity": ex.unused_identity, "mgf_raw": dict(ex.mgf)},
    )


def _task(args):
    kind, cfg, eps, rep, seed = args
    return sim_point(cfg, eps, rep, seed) if kind == "sim" else oracle_point(cfg, eps)


def execute(tasks: list, workers: int) -> list[PointResult]:
    """Run tasks on a bounded pool; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_task, tasks))


def write_csv(path: Path, results: Sequence[PointResult], thetas, header: str) -> None:
    cols = columns(thetas)
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in results:
        if r.row:
            w.writerow({k: _fmt(r.row.get(k)) for k in cols})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _stamp(command: str, cfg, seed) -> str:
    now = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
    return f"htq {command} config={cfg.name} seed={seed} generated={now}"


# ------------------------------------------------------------------ summary

def _flag(ok: Optional[bool]) -> str:
    return "n/a " if ok is None else ("PASS" if ok else "FAIL")


def _points_from_rows(rows: Sequence[dict], source: str = "sim") -> tuple[list, float]:
    """Average replications per epsilon into SweepPoints."""
    by_eps: dict[float, list[dict]] = {}
    for r in rows:
        if r["source"] == source:
            by_eps.setdefault(float(r["epsilon"]), []).append(r)
    pts, pred = [], math.nan

    def avg(rs, key):
        vals = [float(r[key]) for r in rs if r.get(key) not in (None, "")]
        return float(np.mean(vals)) if vals else math.nan

    for eps, rs in by_eps.items():
        pred = float(rs[0]["predicted_mean"])
        mgf = {float(k[len("mgf_theta_"):]): avg(rs, k) for k in rs[0] if k.startswith("mgf_theta_")}
        pts.append(analysis.SweepPoint(eps, avg(rs, "scaled_mean"), avg(rs, "perp_sq_scaled") / eps**2,
                                       mgf, {}, avg(rs, "ks_stat"), source))
    return pts, pred


def summarize(cfg, rows: Sequence[dict], results: Optional[Sequence[PointResult]] = None) -> tuple[str, bool]:
    """Plain-text summary with the pass/fail checks and their thresholds.

    Returns the text and whether every check passed.
    """
    th = cfg.thresholds
    pts, pred_mean = _points_from_rows(rows)
    out = [f"system {cfg.name}: kind={cfg.kind} policy={cfg.policy}",
           f"predicted limit mean (exponential scale): {pred_mean:.6g}", ""]
    out.append(f"{'epsilon':>9} {'scaled_mean':>12} {'rel_gap':>9} {'ks':>8} {'eps2_perp':>11} {'id_resid':>11}")
    for r in sorted((r for r in rows if r["source"] == "sim"), key=lambda r: (-float(r["epsilon"]), int(r["replication"]))):
        m = float(r["scaled_mean"])
        gap = abs(m - pred_mean) / pred_mean if pred_mean > 0 else math.nan
        ks = float(r["ks_stat"]) if r["ks_stat"] else math.nan
        out.append(f"{float(r['epsilon']):>9.4g} {m:>12.6g} {gap:>9.4g} {ks:>8.4g} "
                   f"{float(r['perp_sq_scaled']):>11.4g} {float(r['unused_identity_residual']):>11.3e}")
    checks: list[tuple[str, Optional[bool]]] = []
    if len(pts) >= 3:
        pred = analysis.HTPrediction(pred_mean, np.ones(1), "csv")
        conv = analysis.convergence_report(pts, pred)
        if conv.degenerate:
            checks.append(("prediction is degenerate (zero limit mean); gaps undefined", None))
        else:
            gaps = ", ".join(f"{g:.4g}" for g in conv.gaps)
            checks.append((f"relative gap strictly decreasing [{gaps}]", conv.gap_decreasing))
            checks.append((f"final relative gap {conv.final_gap:.4g} < {th['final_gap']}", conv.final_gap < th["final_gap"]))
            ks = ", ".join(f"{k:.4g}" for k in conv.ks)
            checks.append((f"KS strictly decreasing [{ks}]", conv.ks_decreasing))
            checks.append((f"final KS {conv.ks[-1]:.4g} < {th['ks']}", conv.ks[-1] < th["ks"]))
        ssc = analysis.ssc_report(pts)
        vals = ", ".join(f"{v:.4g}" for v in ssc.scaled_perp)
        if ssc.trivial:
            checks.append((f"state-space collapse: no perpendicular component [{vals}]", True))
        else:
            checks.append((f"eps^2 E||q_perp||^2 strictly decreasing [{vals}]", ssc.decreasing))
            checks.append((f"eps^2 E||q_perp||^2 final/first {ssc.ratio:.4g} < {th['ssc_ratio']}", ssc.ratio < th["ssc_ratio"]))
    else:
        checks.append((f"trend checks need >= 3 epsilon values, have {len(pts)}", None))
    if results is not None:
        sims = [r for r in results if r.row.get("source") == "sim" or r.violation or r.error]
        viol = [r for r in sims if r.violation]
        errs = [r for r in sims if r.error]
        checks.append((f"queue dynamics invariants: {len(viol)} failing points", not viol))
        for r in errs:
            checks.append((f"epsilon={r.epsilon} rep={r.replication}: {r.error}", False))
        ok_pts = [r for r in sims if r.point is not None]
        if ok_pts:
            checks.append(("unused-service identity CI covers epsilon at every point",
                           all(r.identity_covers for r in ok_pts)))
            if cfg.kind == "single":
                checks.append(("transform residual CI covers 0 at every point and theta",
                               all(all(v.values()) for v in (r.residual_covers for r in ok_pts))))
            bounds = [r.unused_sq_bound for r in ok_pts if r.unused_sq_bound]
            if bounds:
                checks.append(("eps^2 E[(sum u)^2] <= eps^3 n S_max at every point (CI low end)",
                               all(a <= b for a, b in bounds)))
            if len(ok_pts) >= 3 and cfg.kind == "lb":
                rep = analysis.residual_report([r.point for r in ok_pts if r.replication == 0])
                for theta, vals in rep.scaled.items():
                    s = ", ".join(f"{v:.3g}" for v in vals)
                    checks.append((f"|residual|/eps^2 at theta={theta_label(theta)} decreasing [{s}]",
                                   rep.decreasing(theta)))
    out.append("")
    out.append("checks:")
    for text, ok in checks:
        out.append(f"  [{_flag(ok)}] {text}")
    passed = all(ok is not False for _, ok in checks)
    return "\n".join(out) + "\n", passed


# ------------------------------------------------------------------ commands

def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg.output_dir)


def _has_violation(results) -> bool:
    return any(r.violation for r in results)


def cmd_run(args, cfg) -> int:
    seed = cfg.seed(args.seed)
    eps = float(args.epsilon) if args.epsilon is not None else cfg.epsilons[0]
    tasks = [("sim", cfg, eps, rep, seed) for rep in range(cfg.replications)]
    if cfg.oracle.get("enabled"):
        tasks.append(("oracle", cfg, eps, 0, seed))
    results = execute(tasks, args.workers)
    out = _out_dir(args, cfg)
    write_csv(out / f"{cfg.name}-run.csv", results, cfg.theta_grid, _stamp("run", cfg, seed))
    for r in results:
        if r.violation:
            print(f"INVARIANT VIOLATION at epsilon={r.epsilon}: {r.violation}", file=sys.stderr)
        if r.error:
            print(f"error at epsilon={r.epsilon}: {r.error}", file=sys.stderr)
        if r.row:
            print(f"{r.row['source']:>6} eps={r.epsilon:g} rep={r.replication} scaled_mean={r.row['scaled_mean']:.6g} "
                  f"predicted={r.row['predicted_mean']:.6g}")
    print(f"wrote {out / (cfg.name + '-run.csv')}")
    if _has_violation(results):
        return EXIT_INVARIANT
    return EXIT_ERROR if any(r.error for r in results) else EXIT_OK


def cmd_sweep(args, cfg) -> int:
    if len(cfg.epsilons) < 3:
        raise ConfigurationError(f"epsilons: a sweep needs at least 3 values, got {len(cfg.epsilons)}")
    seed = cfg.seed(args.seed)
    tasks = [("sim", cfg, eps, rep, seed) for eps in cfg.epsilons for rep in range(cfg.replications)]
    if cfg.oracle.get("enabled"):
        tasks += [("oracle", cfg, eps, 0, seed) for eps in cfg.epsilons]
    results = execute(tasks, args.workers)
    out = _out_dir(args, cfg)
    path = out / f"{cfg.name}-sweep.csv"
    write_csv(path, results, cfg.theta_grid, _stamp("sweep", cfg, seed))
    text, _ = summarize(cfg, read_csv(path), results)
    if cfg.oracle.get("enabled"):
        text += _oracle_table(results)
    (out / f"{cfg.name}-summary.txt").write_text(text)
    print(text, end="")
    print(f"wrote {path}")
    return EXIT_INVARIANT if _has_violation(results) else EXIT_OK


def _oracle_table(results) -> str:
    sims = {(r.epsilon, r.replication): r for r in results if r.row.get("source") == "sim"}
    lines = ["", "oracle comparison (simulation 95% CI covers exact value):"]
    for o in (r for r in results if r.row.get("source") == "oracle" or (r.error and not r.row)):
        if o.error:
            lines.append(f"  eps={o.epsilon:g}: oracle failed: {o.error}")
            continue
        s = sims.get((o.epsilon, 0))
        if s is None or s.point is None:
            continue
        e = s.extra["estimates"]
        cov = {
            "scaled_mean": _covers(e["scaled_mean"], o.extra["scaled_mean_raw"]),
            "unused_identity": _covers(e["unused_identity"], o.extra["unused_identity"]),
        }
        for th, val in o.extra["mgf_raw"].items():
            if th != 0.0:
                cov[f"mgf[{theta_label(th)}]"] = _covers(e["mgf"][th], val)
        flags = " ".join(f"{k}={_flag(v)}" for k, v in cov.items())
        trunc = "TRUNCATED " if o.extra["truncated"] else ""
        lines.append(f"  eps={o.epsilon:g}: {flags} {trunc}boundary_mass={o.extra['boundary_mass']:.2e}")
    return "\n".join(lines) + "\n"


def _covers(est: dict, value: float) -> bool:
    return est["lo"] <= value <= est["hi"]


def cmd_oracle_compare(args, cfg) -> int:
    seed = cfg.seed(args.seed)
    tasks = []
    for eps in cfg.epsilons:
        tasks += [("sim", cfg, eps, 0, seed), ("oracle", cfg, eps, 0, seed)]
    results = execute(tasks, args.workers)
    out = _out_dir(args, cfg)
    path = out / f"{cfg.name}-oracle.csv"
    write_csv(path, results, cfg.theta_grid, _stamp("oracle-compare", cfg, seed))
    text = _oracle_table(results)
    (out / f"{cfg.name}-oracle.txt").write_text(text)
    print(text, end="")
    print(f"wrote {path}")
    return EXIT_INVARIANT if _has_violation(results) else EXIT_OK


def cmd_validate(args, cfg) -> int:
    print(f"config {cfg.name}: schema check passed")
    print(f"kind={cfg.kind} policy={cfg.policy} epsilons={cfg.epsilons}")
    if cfg.kind == "gs":
        S, ch = cfg._schedules(), cfg._channels()
        facets = capacity.capacity_region(S, ch)
        print("facets (c ; b ; sigma_B^2):")
        for i, f in enumerate(facets):
            bd = capacity.b_distribution(f.c, S, ch)
            c = ", ".join(f"{x:.5f}" for x in f.c)
            print(f"  [{i}] c=({c}) b={f.b:.5f} sigma_B^2={bd.variance:.6g}")
            per = ", ".join(f"{t}:{v:.5f}" for t, v in zip(ch.states, bd.values))
            print(f"       per-state max <c,s>: {per}")
        try:
            rep = capacity.check_crp(cfg.system["r"], facets)
        except capacity.NotOnBoundaryError as exc:
            print(f"CRP: FAIL ({exc})")
            return EXIT_CRP
        if not rep.holds:
            print(f"CRP: FAIL, r lies on the intersection of facets {list(rep.binding)}")
            return EXIT_CRP
        f = facets[rep.facet_index]
        print(f"CRP: PASS, r on facet {rep.facet_index}")
        for eps in cfg.epsilons:
            lam = capacity.ht_arrival_mean(cfg.system["r"], f.c, eps, f.b)
            print(f"  eps={eps:g}: arrival mean ({', '.join(f'{x:.5f}' for x in lam)})")
    errs = cfg.check_semantics()
    if errs:
        print("semantic checks: FAIL\n  " + "\n  ".join(errs))
        return EXIT_CONFIG
    print("semantic checks: PASS")
    if cfg.kind != "gs":
        for eps in cfg.epsilons:
            system = cfg.build_system(eps)
            print(f"  eps={eps:g}: arrival mean {np.round(system.arrivals.mean(), 6).tolist()}")
    try:
        print(f"predicted limit mean: {cfg.prediction().limit_mean:.6g}")
    except ConfigurationError as exc:
        print(f"predicted limit mean unavailable: {exc}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    out = _out_dir(args, cfg)
    for suffix in ("sweep", "run", "oracle"):
        path = out / f"{cfg.name}-{suffix}.csv"
        if path.exists():
            break
    else:
        raise ConfigurationError(f"no results for {cfg.name} in {out}; run 'sweep' first")
    text, _ = summarize(cfg, read_csv(path))
    print(f"from {path}")
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "oracle-compare": cmd_oracle_compare,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="htq", description="Heavy-traffic queueing simulator and analysis toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--seed", type=int, default=None, metavar="N", help=f"overrides the config; {config_mod.SEED_ENV} overrides this")
        sp.add_argument("--out", default=None, metavar="DIR")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1, metavar="N")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "run":
            sp.add_argument("--epsilon", type=float, default=None, help="defaults to the first configured value")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = config_mod.load(args.config, semantic=args.command != "validate")
        return COMMANDS[args.command](args, cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
