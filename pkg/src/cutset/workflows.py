"""End-to-end workflows: build a model from a config, run chains, write outputs."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import render_config
from .diagnostics import qq_pairs, summarize
from .errors import ConfigError, ModelError
from .grid import AuxGrid, max_min_select, sample_phi_marginal
from .model import (
    BoxSupport,
    CutModel,
    make_conjugate_toy,
    make_hpv_model,
    make_random_effects_model,
    make_regression_model,
    read_hpv_csv,
    simulate_hpv,
    simulate_random_effects,
    simulate_regression,
)
from .samplers import ChainTrace, RunConfig, run_algorithm, run_sacut

__all__ = [
    "MODELS",
    "build_model",
    "build_grid",
    "RunSummary",
    "run_experiment",
    "kappa_select",
    "write_trace_csv",
    "read_trace_csv",
    "read_random_effects_csv",
    "write_random_effects_csv",
    "read_regression_csv",
    "write_regression_csv",
]

MODELS = ("conjugate", "random_effects", "regression", "hpv")


def _opt_box(params: dict, prefix: str) -> BoxSupport | None:
    lo, hi = params.get(f"{prefix}_lower"), params.get(f"{prefix}_upper")
    if lo is None and hi is None:
        return None
    if lo is None or hi is None:
        raise ConfigError(f"model.{prefix}_lower and model.{prefix}_upper must be given together")
    return BoxSupport(np.atleast_1d(lo), np.atleast_1d(hi))


def build_model(config: RunConfig) -> tuple[CutModel, list[Path]]:
    """Instantiate the model named by ``config.model``.

    Returns the model and the list of data files it read (for input hashing).
    Without a ``model.data`` file the model's synthetic generator is used with
    seed ``model.data_seed`` (default: the run seed).
    """
    p = dict(config.model_params)
    kind = config.model
    data_seed = int(p.get("data_seed", config.seed))
    files: list[Path] = []
    if kind == "conjugate":
        model = make_conjugate_toy(
            float(p.get("y_value", 1.0)), float(p.get("phi_prior_mean", 0.0)), float(p.get("phi_prior_sd", 1.0)),
            theta_support=_opt_box(p, "theta"), phi_support=_opt_box(p, "phi"),
        )
    elif kind == "random_effects":
        if "data" in p:
            files.append(Path(p["data"]))
            y_bar, s_sq, g = read_random_effects_csv(p["data"])
            g = int(p.get("group_size", g))
        else:
            sim = simulate_random_effects(int(p.get("n_groups", 100)), int(p.get("group_size", 20)), seed=data_seed)
            y_bar, s_sq, g = sim["y_bar"], sim["s_sq"], sim["group_size"]
        model = make_random_effects_model(y_bar, s_sq, g, theta_support=_opt_box(p, "theta"))
    elif kind == "regression":
        d = int(p.get("d", 1))
        if "data" in p:
            files += [Path(p["data"]), Path(p["data_z"])] if "data_z" in p else [Path(p["data"])]
            X, Y, Z = read_regression_csv(p["data"], p.get("data_z"))
            d = X.shape[1] - 1
        else:
            sim = simulate_regression(d, int(p.get("n_y", 50)), int(p.get("n_z", 100)), seed=data_seed)
            X, Y, Z = sim["X"], sim["Y"], sim["Z"]
        model = make_regression_model(X, Y, Z, d, noise_var=float(p.get("noise_var", 3.0)),
                                      theta_half_width=float(p.get("theta_half_width", 10.0)))
    elif kind == "hpv":
        if "data" in p:
            files.append(Path(p["data"]))
            records = read_hpv_csv(p["data"])
        else:
            records = simulate_hpv(seed=data_seed)
        model = make_hpv_model(records, theta_support=_opt_box(p, "theta"))
    else:
        raise ConfigError(f"unknown model {kind!r}; choose from {', '.join(MODELS)}")
    return model, files


def build_grid(model: CutModel, config: RunConfig) -> AuxGrid:
    """Max-Min grid of ``config.m`` points from ``config.grid_candidates`` posterior draws."""
    n_cand = max(config.grid_candidates, config.m)
    cand = sample_phi_marginal(model, n_cand, seed=config.seed)
    return max_min_select(cand, config.m, seed=config.seed)


# ----------------------------------------------------------------------------
# data files
# ----------------------------------------------------------------------------

def write_random_effects_csv(path, y_bar, s_sq, group_size: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "y_bar", "s_sq", "group_size"])
        for k, (a, b) in enumerate(zip(y_bar, s_sq), start=1):
            w.writerow([k, repr(float(a)), repr(float(b)), int(group_size)])


def read_random_effects_csv(path) -> tuple[np.ndarray, np.ndarray, int]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"y_bar", "s_sq", "group_size"} <= set(rows[0]):
        raise ModelError("random-effects CSV needs columns group,y_bar,s_sq,group_size")
    try:
        y = np.array([float(r["y_bar"]) for r in rows])
        s = np.array([float(r["s_sq"]) for r in rows])
        g = int(rows[0]["group_size"])
    except ValueError as exc:
        raise ModelError(f"bad random-effects record: {exc}") from exc
    return y, s, g


def write_regression_csv(path, X, Y, Z, path_z) -> None:
    X = np.asarray(X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x_{k}" for k in range(1, X.shape[1] + 1)])
        for yi, xi in zip(Y, X):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])
    with open(path_z, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z"])
        for zi in Z:
            w.writerow([repr(float(zi))])


def read_regression_csv(path, path_z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if path_z is None:
        raise ModelError("regression data needs model.data_z as well")
    try:
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        z = np.loadtxt(path_z, delimiter=",", skiprows=1, ndmin=1)
    except ValueError as exc:
        raise ModelError(f"bad regression data: {exc}") from exc
    return a[:, 1:], a[:, 0], z


# ----------------------------------------------------------------------------
# traces and summaries
# ----------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace_csv(path, traces: list[ChainTrace], config: RunConfig) -> None:
    """One row per retained sample: chain, iteration, theta_*, phi_*."""
    d, p = traces[0].theta.shape[1], traces[0].phi.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration"] + [f"theta_{k}" for k in range(1, d + 1)]
                   + [f"phi_{k}" for k in range(1, p + 1)])
        for tr in traces:
            sl = tr.retained(config.burn_in_fraction, config.thin)
            idx = np.arange(len(tr.theta))[sl]
            for t in idx:
                w.writerow([tr.chain, int(t)] + [_fmt(v) for v in tr.theta[t]] + [_fmt(v) for v in tr.phi[t]])


def read_trace_csv(path) -> tuple[list[str], np.ndarray]:
    """Return the header and the numeric rows of a trace CSV."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


@dataclass
class RunSummary:
    """Posterior summaries and bookkeeping for a finished run."""

    theta: dict
    phi: dict
    n_retained: int
    phi_acceptance: list
    store_size_final: list
    timings: list
    seed: int
    config_text: str
    input_hash: str
    boxes: dict = field(default_factory=dict)
    info: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _input_hash(config_text: str, files: list[Path]) -> str:
    h = hashlib.sha256(config_text.encode())
    for f in files:
        h.update(Path(f).read_bytes())
    return h.hexdigest()


def run_experiment(config: RunConfig, outdir) -> RunSummary:
    """Run ``config.chains`` chains and write outputs to ``outdir``.

    Files written: ``trace.csv`` (retained samples), ``summary.json``,
    ``cells_curve.csv`` (store size against iteration) and, with
    ``dump_aux``, ``aux_stream.csv`` and ``aux_store.csv``.  Chain ``c`` uses
    random streams keyed by ``(seed, c)``.  Files written so far are removed
    if the run fails.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        return _run_experiment(config, outdir, written)
    except BaseException:
        for f in written:
            f.unlink(missing_ok=True)
        raise


def _run_experiment(config: RunConfig, outdir: Path, written: list[Path]) -> RunSummary:
    model, files = build_model(config)
    grid = None
    t0 = time.perf_counter()
    if config.algorithm in ("sacut", "naive"):
        grid = build_grid(model, config)
    grid_time = time.perf_counter() - t0
    traces = []
    aux_fh = aux_writer = None
    if config.dump_aux:
        path = outdir / "aux_stream.csv"
        written.append(path)
        aux_fh = open(path, "w", newline="")
        aux_writer = csv.writer(aux_fh, lineterminator="\n")
        aux_writer.writerow(["chain", "step"] + [f"theta_{k}" for k in range(1, model.d + 1)] + ["i", "log_w_i"])
    try:
        for c in range(config.chains):
            sink = hook = None
            if aux_writer is not None:
                counter = [0]

                def sink(s, c=c, counter=counter):
                    counter[0] += 1
                    aux_writer.writerow([c, counter[0]] + [_fmt(v) for v in s.theta]
                                        + [s.phi_index, _fmt(s.log_w[s.phi_index])])
                if c == 0 and config.algorithm == "sacut":
                    def hook(store):
                        path = outdir / "aux_store.csv"
                        written.append(path)
                        store.write_snapshot(path)
            traces.append(run_algorithm(model, grid, config, c, sink, hook))
    finally:
        if aux_fh is not None:
            aux_fh.close()

    path = outdir / "trace.csv"
    written.append(path)
    write_trace_csv(path, traces, config)

    path = outdir / "cells_curve.csv"
    written.append(path)
    n = config.n_iterations
    every = max(1, n // 1000)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration", "cells"])
        for tr in traces:
            for t in range(every - 1, n, every):
                w.writerow([tr.chain, t + 1, int(tr.store_size[t])])

    sl = [tr.retained(config.burn_in_fraction, config.thin) for tr in traces]
    theta_chains = [tr.theta[s] for tr, s in zip(traces, sl)]
    phi_chains = [tr.phi[s] for tr, s in zip(traces, sl)]
    text = render_config(config)
    timings = []
    for tr in traces:
        tm = dict(tr.timings)
        tm["grid"] = grid_time
        timings.append(tm)
    summary = RunSummary(
        theta=summarize(theta_chains),
        phi=summarize(phi_chains),
        n_retained=int(sum(len(c) for c in theta_chains)),
        phi_acceptance=[tr.n_phi_accepted / n for tr in traces],
        store_size_final=[int(tr.store_size[-1]) for tr in traces],
        timings=timings,
        seed=config.seed,
        config_text=text,
        input_hash=_input_hash(text, files),
        boxes={
            "theta_lower": model.theta_support.lower.tolist(),
            "theta_upper": model.theta_support.upper.tolist(),
            "phi_lower": model.phi_support.lower.tolist(),
            "phi_upper": model.phi_support.upper.tolist(),
        },
        info=[tr.info for tr in traces],
    )
    if grid is not None:
        path = outdir / "grid.csv"
        written.append(path)
        write_grid_csv(path, grid)
    path = outdir / "summary.json"
    written.append(path)
    path.write_text(summary.to_json())
    return summary


def write_grid_csv(path, grid: AuxGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"phi_{k}" for k in range(1, grid.dim + 1)])
        for i, pt in enumerate(grid.points):
            w.writerow([i] + [_fmt(v) for v in pt])


@dataclass
class KappaReport:
    """QQ comparison of candidate precisions against the largest one."""

    reference: int
    rows: list  # dicts with kappa, max_deviation, store_size
    qq: dict    # kappa -> ndarray (q, 2) for the first theta coordinate

    def table(self) -> str:
        lines = ["kappa,max_deviation,store_size"]
        for r in self.rows:
            lines.append(f"{r['kappa']},{r['max_deviation']!r},{r['store_size']}")
        return "\n".join(lines) + "\n"


def kappa_select(
    model: CutModel,
    grid: AuxGrid,
    kappa_candidates,
    trial_iterations: int,
    seed: int = 0,
    base_config: RunConfig | None = None,
    quantile_count: int = 99,
) -> KappaReport:
    """Short SACut runs for each candidate precision, compared by quantiles.

    The largest candidate is the reference.  For every candidate the
    deviation is the largest absolute gap between matched quantiles at
    probabilities ``1/100 .. 99/100`` (the central 98%), maximised over the
    coordinates of ``theta``.
    """
    cands = sorted({int(k) for k in kappa_candidates})
    if len(cands) < 1:
        raise ValueError("need at least one kappa candidate")
    base = base_config or RunConfig()
    prerun = min(base.aux_prerun, max(0, trial_iterations // 10))
    samples = {}
    sizes = {}
    for k in cands:
        cfg = RunConfig(**{**base.as_dict(), "kappa": (k,), "n_iterations": trial_iterations,
                           "aux_prerun": prerun, "seed": seed, "algorithm": "sacut"})
        tr = run_sacut(model, grid, cfg)
        start = int(math.floor(cfg.burn_in_fraction * trial_iterations))
        samples[k] = tr.theta[start:]
        sizes[k] = int(tr.store_size[-1])
    ref = cands[-1]
    rows, qq = [], {}
    for k in cands:
        dev = 0.0
        for j in range(model.d):
            pairs = qq_pairs(samples[k][:, j], samples[ref][:, j], quantile_count)
            if j == 0:
                qq[k] = pairs
            dev = max(dev, float(np.max(np.abs(pairs[:, 0] - pairs[:, 1]))))
        rows.append({"kappa": k, "max_deviation": dev, "store_size": sizes[k]})
    return KappaReport(reference=ref, rows=rows, qq=qq)


def default_workers() -> int:
    """Worker count from ``CUTSET_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CUTSET_WORKERS", "1")))
    except ValueError:
        return 1
