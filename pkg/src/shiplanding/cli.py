"""Command-line entry point: ``precompute`` the sets, ``run`` maneuvers."""

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import design as design_mod
from . import sim, terminal

EXIT_OK = 0
EXIT_FAILED = 1  # a run finished outside the report bounds
EXIT_REJECTED = 2  # initial QP infeasible
EXIT_MIDRUN = 3  # guarantee violated during a run
EXIT_EMPTY_TERMINAL = 4

log = logging.getLogger("shiplanding")

TABLE_HEADER = f"{'run':>10} {'dphi[deg]':>9} {'dtheta[deg]':>11} {'dp_h[m]':>8} {'dv_h[m/s]':>9} {'dv_z[m/s]':>9} {'T[s]':>7}  status"


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario file (TOML); defaults are used for missing keys")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--cache", type=Path, help=f"set cache directory (overridden by ${config_mod.CACHE_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="shiplanding", description="Timed ship-deck landing with shrinking-horizon tube MPC")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("precompute", parents=[common], help="compute and cache the tube and terminal set")
    r = sub.add_parser("run", parents=[common], help="simulate landing maneuvers")
    r.add_argument("--maneuver", choices=["a", "b", "c", "all"], default="all")
    r.add_argument("--seed", type=int, default=0, help="disturbance seed (first seed for Monte Carlo)")
    r.add_argument("--monte-carlo", type=int, default=0, metavar="N", help="run N seeds per maneuver")
    r.add_argument("--check-invariants", action="store_true", help="assert tube and constraint membership per step")
    r.add_argument("--workers", type=int, default=1, help="parallel simulations in Monte Carlo mode")
    r.add_argument("--no-timing", action="store_true", help="write solve_ms as 0 so logs are reproducible byte for byte")
    r.add_argument("--save-logs", action="store_true", help="also write per-step CSV logs in Monte Carlo mode")
    return p


def _design(args, cfg):
    cache = config_mod.cache_dir(args.cache)
    existed = all(p.exists() for p in design_mod._cache_paths(cfg, cache))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", terminal.TerminalSetWarning)
        d = design_mod.build(cfg, cache=cache)
    empty = any(issubclass(w.category, terminal.TerminalSetWarning) for w in caught)
    return d, existed, empty


def cmd_precompute(args, cfg):
    t0 = time.perf_counter()
    d, hit, empty = _design(args, cfg)
    summ = design_mod.summary(d)
    summ["cache_hit"] = hit
    summ["seconds"] = round(time.perf_counter() - t0, 3)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "sets.json", "w") as fh:
        json.dump(summ, fh, indent=2)
    print(f"cache {'hit' if hit else 'written'}: {config_mod.cache_dir(args.cache)}")
    print(f"tube generators       {summ['tube_generators']}")
    print(f"stage rows (tightened) {summ['stage_rows']}")
    print(f"terminal facets       {summ['terminal_facets']}")
    print("tube half-widths      " + ", ".join(f"{k}={v:.4g}" for k, v in summ["tube_halfwidths"].items() if v > 0))
    if empty or summ["terminal_empty"]:
        print("terminal set is EMPTY: no nominal end state admits a safe touchdown within the window; "
              "adjust the touchdown gain, window length or safe set", file=sys.stderr)
        return EXIT_EMPTY_TERMINAL
    print("terminal set is nonempty")
    return EXIT_OK


def _run_one(cfg, d, tag, seed, args, out, write_csv):
    try:
        res = sim.run_maneuver(cfg, tag, seed=seed, design=d, check_invariants=args.check_invariants)
    except sim.ScenarioRejected as err:
        return {"tag": tag, "seed": seed, "status": "rejected", "error": str(err)}, EXIT_REJECTED
    except sim.MidRunFailure as err:
        dump = {"tag": tag, "seed": seed, "status": "failure", "error": str(err), "step": err.k, "dump": err.dump}
        with open(out / f"{tag}_seed{seed}_failure.json", "w") as fh:
            json.dump(dump, fh, indent=2)
        return dump, EXIT_MIDRUN
    stem = f"{tag}_seed{seed}"
    if write_csv:
        res.log.write_csv(out / f"{stem}.csv", timing=not args.no_timing)
    arr = res.log.arrays()
    ms = arr["solve_ms"][: res.scenario.N0]
    rec = {"tag": tag, "seed": seed, "status": "ok" if res.success else "failed",
           "report": res.report.to_dict() if res.report else None,
           "violations": [list(v) for v in res.violations], "terminal_ok": res.terminal_ok,
           "solve_ms_mean": float(ms.mean()) if ms.size else 0.0,
           "solve_ms_max": float(ms.max()) if ms.size else 0.0,
           "qp_iters_max": int(arr["qp_iters"].max()) if arr["qp_iters"].size else 0}
    if res.report is not None:
        res.report.write_json(out / f"{stem}.json")
    if res.success:
        code = EXIT_OK
    elif args.check_invariants and res.violations:
        code = EXIT_MIDRUN
    else:
        code = EXIT_FAILED
    return rec, code


def _row(rec):
    name = f"{rec['tag']}/{rec['seed']}"
    rep = rec.get("report")
    if not rep:
        return f"{name:>10} {'-':>9} {'-':>11} {'-':>8} {'-':>9} {'-':>9} {'-':>7}  {rec['status']}"
    return (f"{name:>10} {rep['d_phi_deg']:9.2f} {rep['d_theta_deg']:11.2f} {rep['d_p_h']:8.3f} "
            f"{rep['d_v_h']:9.3f} {rep['d_v_z']:9.3f} {rep['T']:7.2f}  {rec['status']}")


def _aggregate(records):
    ok = [r for r in records if r.get("report")]
    out = {"runs": len(records),
           "succeeded": sum(r["status"] == "ok" for r in records),
           "rejected": sum(r["status"] == "rejected" for r in records),
           "mid_run_failures": sum(r["status"] == "failure" for r in records),
           "tube_violations": sum(any(v[1] == "tube" for v in r.get("violations", [])) for r in records),
           "constraint_violations": sum(any(v[1] != "tube" for v in r.get("violations", [])) for r in records),
           "terminal_misses": sum(not r.get("terminal_ok", True) for r in records)}
    if ok:
        for key in ("d_phi_deg", "d_theta_deg", "d_p_h", "d_v_h", "d_v_z", "T"):
            vals = np.array([r["report"][key] for r in ok])
            out[f"{key}_mean"] = float(vals.mean())
            out[f"{key}_max"] = float(vals.max())
        out["T_min"] = float(min(r["report"]["T"] for r in ok))
        out["solve_ms_mean"] = float(np.mean([r["solve_ms_mean"] for r in ok]))
        out["solve_ms_max"] = float(max(r["solve_ms_max"] for r in ok))
    return out


def cmd_run(args, cfg):
    d, _, empty = _design(args, cfg)
    if empty:
        print("terminal set is EMPTY; run 'precompute' for details", file=sys.stderr)
        return EXIT_EMPTY_TERMINAL
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    tags = sorted(cfg["maneuvers"]) if args.maneuver == "all" else [args.maneuver]
    n = max(args.monte_carlo, 1)
    seeds = list(range(args.seed, args.seed + n))
    mc = args.monte_carlo > 0
    write_csv = not mc or args.save_logs
    jobs = [(tag, s) for tag in tags for s in seeds]

    def work(job):
        return _run_one(cfg, d, job[0], job[1], args, out, write_csv)

    if args.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    print(TABLE_HEADER)
    for rec, _ in results:
        if not mc:
            print(_row(rec))
        if args.check_invariants and rec.get("violations"):
            for k, what in rec["violations"]:
                print(f"  {rec['tag']}/{rec['seed']}: step {k}: {what}")
    records = [r for r, _ in results]
    summary = {"per_maneuver": {}, "runs": records}
    for tag in tags:
        agg = _aggregate([r for r in records if r["tag"] == tag])
        summary["per_maneuver"][tag] = agg
        if mc:
            print(f"maneuver {tag}: {agg['succeeded']}/{agg['runs']} succeeded, "
                  f"tube violations {agg['tube_violations']}, mid-run failures {agg['mid_run_failures']}, "
                  f"rejected {agg['rejected']}, max solve {agg.get('solve_ms_max', float('nan')):.1f} ms")
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    if mc:
        with open(out / "monte_carlo.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            keys = ("d_phi_deg", "d_theta_deg", "d_p_h", "d_v_h", "d_v_z", "T")
            w.writerow(["tag", "seed", "status", *keys, "solve_ms_max"])
            for r in records:
                rep = r.get("report") or {}
                w.writerow([r["tag"], r["seed"], r["status"], *[rep.get(k, "") for k in keys],
                            r.get("solve_ms_max", "")])
    codes = [c for _, c in results]
    for code in (EXIT_MIDRUN, EXIT_REJECTED, EXIT_FAILED):
        if code in codes:
            return code
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_mod.load(args.config)
    except (OSError, ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    if args.command == "precompute":
        return cmd_precompute(args, cfg)
    return cmd_run(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
