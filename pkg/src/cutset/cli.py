"""Command line interface: ``cutset <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 model or domain
error, 3 numerical degeneracy.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from .config import parse_config, render_config
from .diagnostics import (
    expected_cells_uniform,
    gelman_rubin,
    lag1_autocorr,
    qq_pairs,
    simulate_cells_visited,
    unit_cube_spec,
)
from .errors import ConfigError, CutsetError, DegenerateError, QuadratureError
from .grid import coverage_ratio, max_min_select, overlap_summary, sample_phi_marginal
from .model import simulate_hpv, simulate_random_effects, simulate_regression, write_hpv_csv
from .partition import cell_count
from .samplers import ALGORITHMS, RunConfig
from .workflows import (
    build_model,
    default_workers,
    kappa_select,
    read_trace_csv,
    run_experiment,
    write_grid_csv,
    write_random_effects_csv,
    write_regression_csv,
)
from ._rng import stream

__all__ = ["main", "parse_config", "render_config"]

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_DEGENERATE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    cfg = parse_config(text)
    over = {}
    if getattr(args, "algorithm", None):
        over["algorithm"] = args.algorithm
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "chains", None) is not None:
        over["chains"] = args.chains
    workers = getattr(args, "workers", None)
    if workers is not None:
        over["workers"] = workers
    elif "workers" not in text:
        over["workers"] = default_workers()
    if over:
        try:
            cfg = replace(cfg, **over)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    summary = run_experiment(cfg, args.out)
    print(json.dumps({"theta_mean": summary.theta["mean"], "n_retained": summary.n_retained,
                      "out": str(args.out)}))
    return EXIT_OK


def _cmd_grid(args) -> int:
    cfg = _load_config(args)
    model, _ = build_model(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cand = sample_phi_marginal(model, max(cfg.grid_candidates, cfg.m), seed=cfg.seed)
    grid = max_min_select(cand, cfg.m, seed=cfg.seed)
    report = {"m": grid.m, "first_index": grid.first_index}
    if grid.dim <= 10:
        report["coverage_ratio"] = coverage_ratio(grid, cand)
    if args.overlap:
        report["overlap"] = overlap_summary(model, grid, args.draws_per_point, cfg.seed)
    write_grid_csv(out / "grid.csv", grid)
    (out / "grid.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report))
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    header, data = read_trace_csv(args.trace)
    chains = np.unique(data[:, 0]).astype(int)
    result = {}
    for col in range(2, data.shape[1]):
        name = header[col]
        per = [data[data[:, 0] == c, col] for c in chains]
        entry = {"mean": float(data[:, col].mean()), "sd": float(data[:, col].std(ddof=1)),
                 "q025": float(np.quantile(data[:, col], 0.025)),
                 "q975": float(np.quantile(data[:, col], 0.975))}
        try:
            entry["abs_lag1_ac"] = float(np.mean([abs(lag1_autocorr(x)) for x in per]))
        except (DegenerateError, ValueError):
            entry["abs_lag1_ac"] = None
        if len(per) > 1:
            n = min(len(x) for x in per)
            try:
                entry["rhat"] = gelman_rubin([x[:n] for x in per], split=args.split)
            except (DegenerateError, ValueError):
                entry["rhat"] = None
        result[name] = entry
    if args.compare:
        h2, d2 = read_trace_csv(args.compare)
        out = Path(args.qq_out) if args.qq_out else None
        rows = []
        for col in range(2, min(data.shape[1], d2.shape[1])):
            pairs = qq_pairs(data[:, col], d2[:, col], args.quantiles)
            result[header[col]]["qq_max_deviation"] = float(np.max(np.abs(pairs[:, 0] - pairs[:, 1])))
            rows += [(header[col], a, b) for a, b in pairs]
        if out is not None:
            with open(out, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["parameter", "q_a", "q_b"])
                for name, a, b in rows:
                    w.writerow([name, repr(float(a)), repr(float(b))])
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def _cmd_orthotope(args) -> int:
    rng = stream(args.seed, "misc")
    rows = []
    for kappa in args.kappa:
        spec = unit_cube_spec(args.d, kappa)
        R = cell_count(spec)
        for n in args.n:
            if args.target == "uniform":
                def target(g, k):
                    return spec.support.lower + spec.support.width * g.random((k, args.d))
            else:
                a = (spec.support.lower - 0.5) / args.sd
                b = (spec.support.upper - 0.5) / args.sd

                def target(g, k, a=a, b=b):
                    return stats.truncnorm.rvs(a, b, loc=0.5, scale=args.sd, size=(k, args.d), random_state=g)
            mean, se = simulate_cells_visited(target, spec, n, args.replicates, rng)
            rows.append({"d": args.d, "kappa": kappa, "n": n, "R": R, "mean": mean, "se": se,
                         "expected_uniform": expected_cells_uniform(args.d, kappa, n, R)})
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    print(json.dumps({"target": args.target, "rows": len(rows), "out": str(args.out)}))
    return EXIT_OK


def _cmd_kappa(args) -> int:
    cfg = _load_config(args)
    if len(args.candidates) < 2:
        raise ConfigError("kappa-select needs at least two candidates")
    model, _ = build_model(cfg)
    cand = sample_phi_marginal(model, max(cfg.grid_candidates, cfg.m), seed=cfg.seed)
    grid = max_min_select(cand, cfg.m, seed=cfg.seed)
    report = kappa_select(model, grid, args.candidates, args.trial_iterations, cfg.seed, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "kappa_table.csv").write_text(report.table())
    for k, pairs in report.qq.items():
        with open(out / f"qq_kappa{k}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"q_kappa{k}", f"q_kappa{report.reference}"])
            for a, b in pairs:
                w.writerow([repr(float(a)), repr(float(b))])
    print(report.table(), end="")
    return EXIT_OK


def _cmd_gen(args) -> int:
    out = Path(args.out)
    if args.model == "random_effects":
        sim = simulate_random_effects(args.n_groups, args.group_size, seed=args.seed)
        write_random_effects_csv(out, sim["y_bar"], sim["s_sq"], sim["group_size"])
    elif args.model == "regression":
        sim = simulate_regression(args.d, args.n_y, args.n_z, seed=args.seed)
        z_path = out.with_name(out.stem + "_z" + out.suffix)
        write_regression_csv(out, sim["X"], sim["Y"], sim["Z"], z_path)
    else:
        write_hpv_csv(out, simulate_hpv(n_cities=args.n_cities, seed=args.seed))
    print(str(out))
    return EXIT_OK


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cutset", description="Cut-distribution samplers and diagnostics.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a sampler from a config file")
    r.add_argument("--config", help="flat key = value config file (defaults if omitted)")
    r.add_argument("--algorithm", choices=ALGORITHMS)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--chains", type=int)
    r.add_argument("--workers", type=int, help="likelihood threads (default: $CUTSET_WORKERS or 1)")
    r.set_defaults(func=_cmd_run)

    g = sub.add_parser("grid", help="select the auxiliary grid and report its diagnostics")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--overlap", action="store_true", help="also run the inter-quartile overlap check")
    g.add_argument("--draws-per-point", type=int, default=1000)
    g.set_defaults(func=_cmd_grid)

    d = sub.add_parser("diagnose", help="summarise a trace CSV")
    d.add_argument("--trace", required=True)
    d.add_argument("--compare", help="second trace for quantile comparison")
    d.add_argument("--quantiles", type=int, default=99)
    d.add_argument("--qq-out", help="write matched quantiles to this CSV")
    d.add_argument("--split", action="store_true", help="split-chain R-hat")
    d.add_argument("--out", help="write the JSON summary here")
    d.set_defaults(func=_cmd_diagnose)

    o = sub.add_parser("orthotope-sim", help="simulate the number of visited cells")
    o.add_argument("--d", type=int, default=1)
    o.add_argument("--kappa", type=_ints, default=[1, 2])
    o.add_argument("--n", type=_ints, default=[10, 100, 1000])
    o.add_argument("--replicates", type=int, default=1000)
    o.add_argument("--target", choices=("uniform", "truncnorm"), default="uniform")
    o.add_argument("--sd", type=float, default=0.1)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True, help="curve CSV")
    o.set_defaults(func=_cmd_orthotope)

    k = sub.add_parser("kappa-select", help="compare short runs across precisions")
    k.add_argument("--config")
    k.add_argument("--candidates", type=_ints, required=True)
    k.add_argument("--trial-iterations", type=int, default=20000)
    k.add_argument("--seed", type=int)
    k.add_argument("--out", required=True)
    k.set_defaults(func=_cmd_kappa)

    gd = sub.add_parser("gen-data", help="write a synthetic dataset")
    gd.add_argument("--model", choices=("random_effects", "regression", "hpv"), required=True)
    gd.add_argument("--seed", type=int, default=0)
    gd.add_argument("--out", required=True)
    gd.add_argument("--n-groups", type=int, default=100)
    gd.add_argument("--group-size", type=int, default=20)
    gd.add_argument("--d", type=int, default=1)
    gd.add_argument("--n-y", type=int, default=50)
    gd.add_argument("--n-z", type=int, default=100)
    gd.add_argument("--n-cities", type=int, default=13)
    gd.set_defaults(func=_cmd_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"cutset: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateError, QuadratureError) as exc:
        print(f"cutset: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (CutsetError, ValueError) as exc:
        print(f"cutset: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"cutset: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
