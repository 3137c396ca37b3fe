"""Main-chain drivers for the cut distribution.

All four samplers share the same ``phi`` update: a Gaussian random walk
accepted with probability ``min(1, p(phi'|Z) / p(phi|Z))``.  That ratio never
involves ``theta``, and the ``phi`` proposals and acceptance uniforms come from
their own random stream, so the ``phi`` path for a given seed is the same for
every algorithm.  What differs is how ``theta`` is refreshed:

``sacut``
    At each accepted ``phi``, draw ``theta`` from the piecewise-constant
    proposal built by the rounded store of the auxiliary chain.
``naive``
    Same, but resample one of the raw auxiliary draws.
``nested``
    Run ``n_int`` random-walk steps on ``p(theta | Y, phi_n)`` every
    iteration (``n_int = 1`` is the classic WinBUGS cut scheme).
``gibbs``
    Draw ``theta`` exactly from ``p(theta | Y, phi)`` at each accepted
    ``phi`` (needs a model with an exact conditional sampler).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from ._mcmc import pilot_scale
from ._rng import stream
from .errors import DegenerateError, ModelError
from .grid import AuxGrid
from .model import CutModel
from .partition import PartitionSpec
from .proposal import NaiveStore, RoundedStore, WeightProcess, pstar_draw_naive, sample_pkappa
from .samc import AuxSample, SamcChain

__all__ = [
    "ALGORITHMS",
    "RunConfig",
    "ChainTrace",
    "phi_accept_prob",
    "tune_phi_step",
    "tune_theta_step",
    "run_sacut",
    "run_naive_sacut",
    "run_nested_mcmc",
    "run_partial_gibbs",
    "run_algorithm",
]

ALGORITHMS = ("sacut", "naive", "nested", "gibbs")


@dataclass
class RunConfig:
    """Settings for one run (one or more chains).

    ``kappa``, ``phi_step_sd`` and ``theta_step_sd`` accept a scalar (broadcast
    over dimensions) or a tuple.  Step sizes left as ``None`` are picked by a
    short pilot run on a dedicated random stream.
    """

    n_iterations: int = 100_000
    burn_in_fraction: float = 0.1
    thin: int = 100
    kappa: tuple[int, ...] = (3,)
    n0: int = 1000
    m: int = 50
    p_mix: float = 0.75
    aux_prerun: int = 10_000
    phi_step_sd: tuple[float, ...] | None = None
    theta_step_sd: tuple[float, ...] | None = None
    n_int: int = 1
    seed: int = 0
    workers: int = 1
    algorithm: str = "sacut"
    neighbours: int = 4
    chains: int = 1
    grid_candidates: int = 2000
    dump_aux: bool = False
    model: str = "conjugate"
    model_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kappa = _as_tuple(self.kappa, int)
        self.phi_step_sd = None if self.phi_step_sd is None else _as_tuple(self.phi_step_sd, float)
        self.theta_step_sd = None if self.theta_step_sd is None else _as_tuple(self.theta_step_sd, float)
        self.model_params = dict(self.model_params)
        self.validate()

    def validate(self) -> None:
        err = []
        if not self.n_iterations > self.aux_prerun >= 0:
            err.append("need n_iterations > aux_prerun >= 0")
        if self.thin < 1:
            err.append("thin must be >= 1")
        if not 0 <= self.burn_in_fraction < 1:
            err.append("burn_in_fraction must lie in [0, 1)")
        if any(k < 0 for k in self.kappa):
            err.append("kappa must be nonnegative")
        if self.n0 < 1:
            err.append("n0 must be >= 1")
        if self.m < 1:
            err.append("m must be >= 1")
        if not 0 < self.p_mix <= 1:
            err.append("p_mix must lie in (0, 1]")
        if self.n_int < 1:
            err.append("n_int must be >= 1")
        if self.workers < 1:
            err.append("workers must be >= 1")
        if self.chains < 1:
            err.append("chains must be >= 1")
        if self.neighbours < 1:
            err.append("neighbours must be >= 1")
        if self.algorithm not in ALGORITHMS:
            err.append(f"algorithm must be one of {', '.join(ALGORITHMS)}")
        for name in ("phi_step_sd", "theta_step_sd"):
            v = getattr(self, name)
            if v is not None and any(s <= 0 for s in v):
                err.append(f"{name} must be positive")
        if err:
            raise ValueError("; ".join(err))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _as_tuple(v, kind) -> tuple:
    if np.ndim(v) == 0:
        return (kind(v),)
    return tuple(kind(x) for x in v)


@dataclass
class ChainTrace:
    """Output of one chain, one row per iteration (before burn-in/thinning).

    Attributes
    ----------
    theta, phi : ndarray
        Shapes ``(n, d)`` and ``(n, p)``.
    phi_accepted : ndarray of bool
    store_size : ndarray of int
        Number of stored cells after each iteration (zero for samplers
        without an auxiliary chain).
    timings : dict
        Wall-clock seconds per phase.
    """

    theta: np.ndarray
    phi: np.ndarray
    phi_accepted: np.ndarray
    store_size: np.ndarray
    timings: dict = field(default_factory=dict)
    algorithm: str = ""
    chain: int = 0
    info: dict = field(default_factory=dict)

    @property
    def n_phi_accepted(self) -> int:
        return int(self.phi_accepted.sum())

    def retained(self, burn_in_fraction: float, thin: int) -> slice:
        """Slice selecting post-burn-in rows, keeping every ``thin``-th."""
        start = int(math.floor(burn_in_fraction * len(self.theta)))
        return slice(start + thin - 1, None, thin)


def phi_accept_prob(model: CutModel, phi_prev, phi_prop, q_log_ratio: float = 0.0) -> float:
    """``min(1, exp(log p(phi'|Z) - log p(phi|Z) + q_log_ratio))``.

    Proposals outside the ``phi`` box have probability 0.
    """
    phi_prop = np.asarray(phi_prop, dtype=float)
    if not model.phi_support.contains(phi_prop):
        return 0.0
    delta = model._log_phi_post(phi_prop) - model._log_phi_post(np.asarray(phi_prev, dtype=float))
    return _prob(delta + q_log_ratio)


def _prob(log_ratio: float) -> float:
    if math.isnan(log_ratio) or log_ratio == -math.inf:
        return 0.0
    return 1.0 if log_ratio >= 0 else math.exp(log_ratio)


def tune_phi_step(model: CutModel, config: RunConfig, chain: int = 0) -> np.ndarray:
    """Return the ``phi`` random-walk step (configured, else from a pilot run)."""
    if config.phi_step_sd is not None:
        return np.broadcast_to(np.asarray(config.phi_step_sd, dtype=float), (model.p,)).copy()
    sup = model.phi_support
    rng = stream(config.seed, "tuning", chain)
    return pilot_scale(model._log_phi_post, model.initial_phi(), 0.05 * sup.width, rng, sup.lower, sup.upper)


def tune_theta_step(model: CutModel, config: RunConfig, phi, chain: int = 0) -> np.ndarray:
    """Return the ``theta`` random-walk step, tuned on ``p(theta | Y, phi)`` if unset."""
    if config.theta_step_sd is not None:
        return np.broadcast_to(np.asarray(config.theta_step_sd, dtype=float), (model.d,)).copy()
    sup = model.theta_support
    rng = stream(config.seed, "tuning", chain + 1_000_000)
    phi = np.asarray(phi, dtype=float)

    def target(th):
        return float(model._log_joint_y(th[None, :], phi)[0])

    return pilot_scale(target, model.initial_theta(), 0.05 * sup.width, rng, sup.lower, sup.upper)


class _PhiChain:
    """The algorithm-independent ``phi`` random walk."""

    def __init__(self, model: CutModel, config: RunConfig, chain: int):
        self.model = model
        self.step = tune_phi_step(model, config, chain)
        rng = stream(config.seed, "phi", chain)
        n = config.n_iterations
        self.z = rng.standard_normal((n, model.p))
        self.u = rng.random(n)
        self.phi = model.initial_phi()
        self.lp = model._log_phi_post(self.phi)
        sup = model.phi_support
        self._lo, self._hi = sup.lower, sup.upper

    def advance(self, t: int) -> bool:
        prop = self.phi + self.step * self.z[t]
        if np.any(prop < self._lo) or np.any(prop > self._hi):
            return False
        lp = self.model._log_phi_post(prop)
        if self.u[t] < _prob(lp - self.lp):
            self.phi, self.lp = prop, lp
            return True
        return False


def _make_trace(n, model) -> dict:
    return {
        "theta": np.empty((n, model.d)),
        "phi": np.empty((n, model.p)),
        "acc": np.zeros(n, dtype=bool),
        "size": np.zeros(n, dtype=np.int64),
    }


def _aux_setup(model: CutModel, grid: AuxGrid, config: RunConfig, chain: int, timings: dict):
    t0 = time.perf_counter()
    centre = np.argmin(np.linalg.norm(grid.points - model.initial_phi(), axis=1))
    theta_step = tune_theta_step(model, config, grid.points[centre], chain)
    aux = SamcChain(
        model, grid, stream(config.seed, "aux", chain),
        n0=config.n0, p_mix=config.p_mix, theta_step_sd=theta_step, neighbours=config.neighbours,
    )
    timings["tuning"] = timings.get("tuning", 0.0) + time.perf_counter() - t0
    t0 = time.perf_counter()
    aux.run(config.aux_prerun)
    timings["aux_prerun"] = time.perf_counter() - t0
    return aux


def _store_driven(
    model: CutModel,
    grid: AuxGrid,
    config: RunConfig,
    chain: int,
    store,
    draw_theta: Callable[[np.ndarray], np.ndarray],
    algorithm: str,
    aux_sink: Callable[[AuxSample], None] | None,
    store_hook: Callable[[object], None] | None = None,
) -> ChainTrace:
    timings: dict = {}
    t0 = time.perf_counter()
    phi_chain = _PhiChain(model, config, chain)
    timings["tuning"] = time.perf_counter() - t0
    aux = _aux_setup(model, grid, config, chain, timings)
    n = config.n_iterations
    out = _make_trace(n, model)
    theta = model.initial_theta()
    t_aux = t_main = 0.0
    try:
        for t in range(n):
            t1 = time.perf_counter()
            s = aux.step()
            store.absorb(s)
            if aux_sink is not None:
                aux_sink(s)
            t2 = time.perf_counter()
            if phi_chain.advance(t):
                out["acc"][t] = True
                try:
                    theta = draw_theta(phi_chain.phi)
                except DegenerateError as exc:
                    raise DegenerateError(f"iteration {t}: {exc}") from exc
            out["theta"][t] = theta
            out["phi"][t] = phi_chain.phi
            out["size"][t] = len(store)
            t_aux += t2 - t1
            t_main += time.perf_counter() - t2
        if store_hook is not None:
            store_hook(store)
    finally:
        store.close()
    timings["aux"] = t_aux
    timings["main"] = t_main
    info = {
        "phi_step_sd": phi_chain.step.tolist(),
        "theta_step_sd": aux.state.theta_step_sd.tolist(),
        "aux_visits": aux.visits.tolist(),
        "final_log_w": aux.state.log_w.tolist(),
        "absorbed": store.n,
        "skipped": store.skipped,
        "query_evals": store.query_evals,
    }
    return ChainTrace(out["theta"], out["phi"], out["acc"], out["size"], timings, algorithm, chain, info)


def run_sacut(model: CutModel, grid: AuxGrid, config: RunConfig, chain: int = 0,
              aux_sink: Callable[[AuxSample], None] | None = None,
              store_hook: Callable[[object], None] | None = None) -> ChainTrace:
    """Stochastic approximation cut sampler (rounded store).

    Each iteration advances the auxiliary chain one step and folds the draw
    into the store, then proposes ``phi``.  Only when ``phi`` is accepted is a
    new ``theta`` drawn from the weight-process proposal at the new ``phi``;
    otherwise the previous pair is copied.
    """
    spec = PartitionSpec(np.broadcast_to(np.asarray(config.kappa), (model.d,)), model.theta_support)
    store = RoundedStore(spec, model, grid, workers=config.workers)
    rng = stream(config.seed, "theta", chain)

    def draw(phi):
        logp = store.log_cell_probs(phi)
        w = WeightProcess(keys=store.keys, probs=np.exp(logp), n=store.n, R=store.R)
        return sample_pkappa(w, spec, rng)

    return _store_driven(model, grid, config, chain, store, draw, "sacut", aux_sink, store_hook)


def run_naive_sacut(model: CutModel, grid: AuxGrid, config: RunConfig, chain: int = 0,
              aux_sink: Callable[[AuxSample], None] | None = None,
              store_hook: Callable[[object], None] | None = None) -> ChainTrace:
    """Naive variant: ``theta`` is resampled from the unrounded auxiliary draws."""
    store = NaiveStore(model, grid, workers=config.workers)
    rng = stream(config.seed, "theta", chain)

    def draw(phi):
        return pstar_draw_naive(store, phi, model, rng)

    return _store_driven(model, grid, config, chain, store, draw, "naive", aux_sink, store_hook)


def run_nested_mcmc(model: CutModel, config: RunConfig, chain: int = 0) -> ChainTrace:
    """Nested MCMC: ``n_int`` random-walk steps on ``theta`` after every ``phi`` update."""
    timings: dict = {}
    t0 = time.perf_counter()
    phi_chain = _PhiChain(model, config, chain)
    step = tune_theta_step(model, config, phi_chain.phi, chain)
    timings["tuning"] = time.perf_counter() - t0
    rng = stream(config.seed, "theta", chain)
    n, n_int, d = config.n_iterations, config.n_int, model.d
    out = _make_trace(n, model)
    theta = model.initial_theta()
    lo, hi = model.theta_support.lower, model.theta_support.upper
    t0 = time.perf_counter()
    for t in range(n):
        out["acc"][t] = phi_chain.advance(t)
        phi = phi_chain.phi
        lt = float(model._log_joint_y(theta[None, :], phi)[0])
        z = rng.standard_normal((n_int, d))
        u = rng.random(n_int)
        for k in range(n_int):
            prop = theta + step * z[k]
            if np.any(prop < lo) or np.any(prop > hi):
                continue
            lp = float(model._log_joint_y(prop[None, :], phi)[0])
            if u[k] < _prob(lp - lt):
                theta, lt = prop, lp
        out["theta"][t] = theta
        out["phi"][t] = phi
    timings["main"] = time.perf_counter() - t0
    info = {"phi_step_sd": phi_chain.step.tolist(), "theta_step_sd": step.tolist(), "n_int": n_int}
    return ChainTrace(out["theta"], out["phi"], out["acc"], out["size"], timings, "nested", chain, info)


def run_partial_gibbs(model: CutModel, config: RunConfig, chain: int = 0) -> ChainTrace:
    """Partial Gibbs oracle: exact ``theta | Y, phi`` draw at every accepted ``phi``."""
    if model.exact_conditional_sampler is None:
        raise ModelError(f"model {model.name!r} has no exact conditional sampler")
    timings: dict = {}
    t0 = time.perf_counter()
    phi_chain = _PhiChain(model, config, chain)
    timings["tuning"] = time.perf_counter() - t0
    rng = stream(config.seed, "theta", chain)
    n = config.n_iterations
    out = _make_trace(n, model)
    theta = model.initial_theta()
    t0 = time.perf_counter()
    for t in range(n):
        if phi_chain.advance(t):
            out["acc"][t] = True
            theta = np.asarray(model.exact_conditional_sampler(phi_chain.phi, rng), dtype=float)
        out["theta"][t] = theta
        out["phi"][t] = phi_chain.phi
    timings["main"] = time.perf_counter() - t0
    info = {"phi_step_sd": phi_chain.step.tolist()}
    return ChainTrace(out["theta"], out["phi"], out["acc"], out["size"], timings, "gibbs", chain, info)


def run_algorithm(model: CutModel, grid: AuxGrid | None, config: RunConfig, chain: int = 0,
                  aux_sink: Callable[[AuxSample], None] | None = None,
                  store_hook: Callable[[object], None] | None = None) -> ChainTrace:
    """Dispatch on ``config.algorithm``."""
    alg = config.algorithm
    if alg in ("sacut", "naive"):
        if grid is None:
            raise ValueError(f"algorithm {alg!r} needs an auxiliary grid")
        fn = run_sacut if alg == "sacut" else run_naive_sacut
        return fn(model, grid, config, chain, aux_sink, store_hook)
    if alg == "nested":
        return run_nested_mcmc(model, config, chain)
    if alg == "gibbs":
        return run_partial_gibbs(model, config, chain)
    raise ValueError(f"unknown algorithm {alg!r}")
