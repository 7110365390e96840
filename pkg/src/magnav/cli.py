"""Command-line driver: ``magnav simulate | estimate | metrics | ablate | detect-loops``.

Exit status is 0 on success, 2 for configuration problems, 3 for bad or
missing data files and 4 when the solver fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import loopclosure as lc
from . import pipeline as pl
from .errors import ConfigError, DataError, MagNavError, SolverError
from .io import (
    CONFIG_ENV,
    TRUTH_COLS,
    Dataset,
    load_config,
    read_covariances,
    read_csv,
    read_estimate,
    write_csv,
    write_estimate,
    write_loops,
    write_matrix,
)
from .magnetostatics import invariant_streams
from .metrics import evaluate
from .solver import Information

log = logging.getLogger("magnav")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4

ABLATION_COLS = ("variant", "position_rmse", "attitude_rmse", "position_change_pct",
                 "attitude_change_pct")


def _config(args) -> dict:
    return load_config(args.config)


def _estimator(args, cfg):
    est = pl.estimator_config(cfg)
    for term in pl.ABLATIONS:
        if getattr(args, f"drop_{term}", False):
            est = est.dropping(term)
    return est


def _baseline(cfg):
    return cfg.get("sensors", {}).get("array_baseline")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ds = pl.simulate(cfg, seed=args.seed, noise_free=args.noise_free)
    ds.write(args.out)
    log.info("wrote dataset to %s (%d magnetometer samples)", args.out, ds.t_mag.size)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    est = _estimator(args, cfg)
    ds = Dataset.read(args.dataset)
    res = pl.estimate(ds, est, with_loops=args.loops, covariances=not args.no_covariances,
                      baseline=_baseline(cfg))
    out = Path(args.out)
    write_estimate(out, res.t, res.theta, res.r, res.covariances)
    write_loops(out / "loops.csv", res.candidates)
    report = {
        "passes": [r.to_dict() for r in res.reports],
        "keyframes": int(res.t.size),
        "loop_candidates": len(res.candidates),
        "loops_accepted": [[c.i, c.j] for c in res.accepted],
        "dropped": [t for t in pl.ABLATIONS if not getattr(est, f"use_{t}")],
    }
    if ds.truth is not None:
        report["metrics"] = pl.score(ds, res, with_nees=res.covariances is not None).summary()
    _write_json(out / "report.json", report)
    log.info("final cost %.6g after %d pass(es)", res.report.final_cost, len(res.reports))
    return EXIT_OK


def cmd_metrics(args) -> int:
    t, theta, r = read_estimate(args.estimate)
    _, truth = read_csv(args.truth, TRUTH_COLS)
    cov = None
    if args.covariances:
        t_cov, cov = read_covariances(args.covariances)
        if t_cov.shape != t.shape or np.any(t_cov != t):
            raise DataError("covariance timestamps do not match the estimate")
    period = float(np.median(np.diff(t))) if t.size > 1 else args.key_period
    m = evaluate(t, theta, r, truth[:, 0], truth[:, 3], truth[:, 1:3], cov, period, args.alpha)
    summary = m.summary()
    if args.out:
        _write_json(args.out, summary)
    if args.nees_out and m.nees.size:
        write_csv(args.nees_out, ("k", "nees"), np.column_stack([np.arange(m.nees.size), m.nees]))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    est = pl.estimator_config(cfg)
    ds = Dataset.read(args.dataset)
    if ds.truth is None:
        raise DataError(f"{args.dataset}: ablation needs truth.csv")
    if _baseline(cfg) is not None and ds.baseline is None:
        ds.baseline = _baseline(cfg)
    rows = pl.ablate(ds, est, with_loops=args.loops)
    lines = [",".join(ABLATION_COLS)]
    for row in rows:
        lines.append(",".join([row["variant"]] + [f"{row[c]:.17g}" for c in ABLATION_COLS[1:]]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_detect_loops(args) -> int:
    cfg = _config(args)
    est = pl.estimator_config(cfg)
    ds = Dataset.read(args.dataset)
    kf = pl.keyframes(ds, est, _baseline(cfg))
    streams = invariant_streams(kf.B, kf.g)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for b, label in enumerate(lc.LABELS):
        D = lc.distance_matrix(streams[:, b], label)
        write_matrix(out / f"distance_{label}.csv", D.values)
        write_matrix(out / f"distance_{label}_log10.csv", D.log_scaled())
    D = lc.combined_distance(streams)
    write_matrix(out / "distance_combined.csv", D.values)
    write_matrix(out / "distance_combined_log10.csv", D.log_scaled())
    cands = lc.extract_candidates(D, est.loops.tau, est.loops.min_sep, est.loops.window)
    if args.gate and cands:
        res = pl.estimate(ds, est, with_loops=False, covariances=False, baseline=_baseline(cfg))
        info = Information(res.problem)
        lc.gate_candidates(cands, res.problem.poses, info.relative, est.loops.alpha)
    write_loops(out / "loops.csv", cands)
    for c in cands:
        print(f"{c.i},{c.j},{c.score:.6g},{c.statistic:.6g},{int(c.accepted)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="magnav",
        description="Planar magnetic-field odometry: simulate, estimate and evaluate.",
        epilog=f"Named configs are looked up in ${CONFIG_ENV} first, then in the bundled set.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def config_arg(sp):
        sp.add_argument("-c", "--config", default="demo",
                        help="config file path or bundled name (default: demo)")

    s = sub.add_parser("simulate", help="simulate a dataset directory")
    config_arg(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-free", action="store_true")
    s.add_argument("-o", "--out", required=True, help="output dataset directory")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate the trajectory of a dataset")
    e.add_argument("dataset")
    config_arg(e)
    loops = e.add_mutually_exclusive_group()
    loops.add_argument("--with-loops", dest="loops", action="store_true", default=True)
    loops.add_argument("--no-loops", dest="loops", action="store_false")
    for term in pl.ABLATIONS:
        e.add_argument(f"--drop-{term}", action="store_true", help=f"omit the {term} residuals")
    e.add_argument("--no-covariances", action="store_true", help="skip marginal covariances")
    e.add_argument("-o", "--out", required=True, help="output directory")
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("metrics", help="score an estimate against ground truth")
    m.add_argument("--estimate", required=True)
    m.add_argument("--truth", required=True)
    m.add_argument("--covariances")
    m.add_argument("--alpha", type=float, default=0.05)
    m.add_argument("--key-period", type=float, default=0.2,
                   help="association window for single-pose estimates (s)")
    m.add_argument("-o", "--out", help="write the summary JSON here")
    m.add_argument("--nees-out", help="write the per-keyframe NEES series here")
    m.set_defaults(func=cmd_metrics)

    a = sub.add_parser("ablate", help="baseline and drop-one-term ablation table")
    a.add_argument("dataset")
    config_arg(a)
    a.add_argument("--with-loops", dest="loops", action="store_true", default=False)
    a.add_argument("-o", "--out", help="write the table CSV here")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("detect-loops", help="invariant distance matrices and loop candidates")
    d.add_argument("dataset")
    config_arg(d)
    d.add_argument("--no-gate", dest="gate", action="store_false",
                   help="skip the chi-square gate (no solve)")
    d.add_argument("-o", "--out", required=True, help="output directory")
    d.set_defaults(func=cmd_detect_loops)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except MagNavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
