"""Command line entry point: ``aggmom {run,aggregate,slope,simulate,estimate}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import experiments, noise, simulate
from .estimators import ESTIMATORS, LimleOptions


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def cmd_run(args) -> int:
    config = experiments.load_config(args.config)
    records = experiments.run_sweep(config, jobs=args.jobs)
    fh, close = _open_out(args.out)
    try:
        experiments.write_records_csv(records, fh)
    finally:
        if close:
            fh.close()
    failed = sum(not r.ok for r in records)
    print(f"wrote {len(records)} records ({failed} failed)", file=sys.stderr)
    return 0


def cmd_aggregate(args) -> int:
    records = experiments.read_records_csv(args.input)
    rows = experiments.aggregate_by_TK(records, metric=args.metric)
    fh, close = _open_out(args.out)
    try:
        experiments.write_aggregate_csv(rows, fh)
    finally:
        if close:
            fh.close()
    return 0


def cmd_slope(args) -> int:
    records = experiments.read_records_csv(args.input)
    rows = experiments.aggregate_by_TK(records, metric=args.metric)
    groups = defaultdict(list)
    for r in rows:
        groups[(r.noise_kind, r.noise_param, r.N, r.estimator)].append(r)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["noise_kind", "noise_param", "N", "estimator", "metric", "slope", "r2"])
    for key in sorted(groups):
        try:
            slope, r2 = experiments.fit_loglog_slope(groups[key], min_TK=args.min_tk)
            w.writerow([*key, args.metric, repr(slope), repr(r2)])
        except experiments.InsufficientPointsError:
            w.writerow([*key, args.metric, "", ""])
    return 0


def cmd_simulate(args) -> int:
    config = experiments.load_config(args.config)
    if args.out is None:
        raise ValueError("simulate needs --out DIR")
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    N = config.N_list[0] if args.N is None else args.N
    T, K = config.T_list[0], config.K_list[0]
    P = experiments.trial_chain(config, 0)
    seed = experiments.cell_seed(config, N, T, K, 0)
    ens = simulate.simulate_ensemble(P, N, T, K, seed, config.initial_distribution)
    model = noise.parse_noise(args.noise) if args.noise else config.noise_models()[0]
    out = Path(args.out)
    simulate.write_ensemble(ens, out / "true")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, 0)))
    observed = simulate.Ensemble(noise.apply_noise(model, ens.counts, rng), N=N, seed=seed)
    simulate.write_ensemble(observed, out, extra={"noise": str(model), "D": config.D})
    _write_matrix(P, out / "P_true.csv")
    print(f"wrote K={K} realizations of T={T}, S={config.S} to {out}", file=sys.stderr)
    return 0


def _write_matrix(M, path_or_file):
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(M):
            w.writerow([repr(float(v)) for v in row])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def cmd_estimate(args) -> int:
    if args.input is None:
        raise ValueError("estimate needs --in DIR")
    if args.method not in ESTIMATORS:
        raise ValueError(f"unknown method {args.method!r}; choose from {sorted(ESTIMATORS)}")
    ens = simulate.read_ensemble(args.input)
    model = noise.parse_noise(args.noise) if args.noise else noise.NoiseModel.none()
    N = args.N if args.N is not None else ens.N
    kw = {}
    if args.method == "limle":
        kw = {"seed": args.seed or 0, "options": LimleOptions()}
    res = ESTIMATORS[args.method](ens.counts, model, N, **kw)
    M = res.P_projected if args.projected else res.P_raw
    _write_matrix(M, sys.stdout)
    for msg in res.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    if args.out:
        out = Path(args.out)
        _write_matrix(M, out)
        meta = {
            "estimator": res.estimator,
            "matrix": "projected" if args.projected else "raw",
            "T": ens.T, "K": ens.K, "N": N, "noise": str(model),
            "seed": args.seed, "warnings": res.warnings,
        }
        with open(out.with_suffix(out.suffix + ".json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggmom", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a sweep and write records CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default $AGGMOM_JOBS or 1)")
    p.set_defaults(func=cmd_run)

    for name, func, help_ in (("aggregate", cmd_aggregate, "mean error and 95%% CI per TK"),
                              ("slope", cmd_slope, "log-log slope of mean error vs TK")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--metric", default="mse_raw", choices=["mse_raw", "mse_projected", "stat_err"])
        if name == "aggregate":
            p.add_argument("--out")
        else:
            p.add_argument("--min-tk", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="simulate one ensemble from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--noise")
    p.add_argument("--N", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate P from observation CSVs")
    p.add_argument("--in", dest="input")
    p.add_argument("--method", default="mom")
    p.add_argument("--noise")
    p.add_argument("--N", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--projected", action="store_true", help="print the row-stochastic projection")
    p.set_defaults(func=cmd_estimate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"aggmom {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
