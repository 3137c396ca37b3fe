"""Convergence and accuracy diagnostics.

Besides the usual chain summaries (Gelman-Rubin, lag-1 autocorrelation,
Kolmogorov-Smirnov distance, quantile pairs) this module covers how many
partition cells a stationary auxiliary chain is expected to visit.  For ``n``
independent draws from the uniform law on ``R`` cells,

    E|visited| = R - R ((R - 1) / R)**n,

and no other target visits more cells on average.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import DegenerateError
from .model import BoxSupport
from .partition import PartitionSpec, cell_count, lattice_keys

__all__ = [
    "gelman_rubin",
    "lag1_autocorr",
    "mse_components",
    "expected_cells_uniform",
    "simulate_cells_visited",
    "ks_distance",
    "qq_pairs",
    "summarize",
]


def gelman_rubin(chains, split: bool = False) -> float:
    """Potential scale reduction factor.

    Uses ``sqrt((((n - 1) / n) W + B / n) / W)`` with ``W`` the mean
    within-chain variance and ``B`` ``n`` times the variance of chain means.
    With ``split`` each chain is first cut into two halves.

    Raises
    ------
    DegenerateError
        If the within-chain variance is zero.
    """
    arrs = [np.asarray(c, dtype=float).ravel() for c in chains]
    if split:
        halves = []
        for a in arrs:
            h = a.size // 2
            halves += [a[:h], a[a.size - h:]]
        arrs = halves
    if len(arrs) < 2:
        raise ValueError("gelman_rubin needs at least two chains")
    n = min(a.size for a in arrs)
    if n < 10 or any(a.size != n for a in arrs):
        raise ValueError("chains must have equal length of at least 10")
    x = np.stack(arrs)
    w = float(np.mean(x.var(axis=1, ddof=1)))
    if not w > 0:
        raise DegenerateError("zero within-chain variance")
    b = n * float(x.mean(axis=1).var(ddof=1))
    return math.sqrt(((n - 1) / n * w + b / n) / w)


def lag1_autocorr(trace) -> float:
    """Standard lag-1 autocorrelation estimate ``sum (x_t - m)(x_{t+1} - m) / sum (x_t - m)^2``."""
    x = np.asarray(trace, dtype=float).ravel()
    if x.size < 3:
        raise ValueError("trace needs at least 3 values")
    c = x - x.mean()
    den = float(c @ c)
    if den == 0.0:
        raise DegenerateError("zero variance trace")
    return float(c[:-1] @ c[1:]) / den


def mse_components(estimates, truth) -> float:
    """Mean squared error across components."""
    e = np.asarray(estimates, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if e.shape != t.shape:
        raise ValueError("estimates and truth must have the same length")
    return float(np.mean((e - t) ** 2))


def expected_cells_uniform(d: int, kappa: int, n: int, R: int | None = None) -> float:
    """Expected number of distinct cells hit by ``n`` uniform draws.

    ``R`` defaults to the cell count of the unit cube padded by half a cell,
    ``(10**kappa + 1)**d``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if R is None:
        R = (10 ** int(kappa) + 1) ** int(d)
    R = int(R)
    # R (1 - (1 - 1/R)^n), computed stably for large R.
    return float(-R * math.expm1(n * math.log1p(-1.0 / R))) if R > 1 else 1.0


def simulate_cells_visited(
    target: Callable[[np.random.Generator, int], np.ndarray],
    spec: PartitionSpec,
    n: int,
    replicates: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the number of distinct cells visited.

    ``target(rng, k)`` returns ``k`` i.i.d. draws of shape ``(k, d)``.
    """
    if replicates < 30:
        raise ValueError("replicates must be at least 30")
    counts = np.empty(replicates)
    for r in range(replicates):
        keys = lattice_keys(np.asarray(target(rng, n), dtype=float).reshape(n, spec.d), spec)
        counts[r] = len(np.unique(keys, axis=0))
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(replicates))


def unit_cube_spec(d: int, kappa: int) -> PartitionSpec:
    """Unit cube widened by half a cell on every side."""
    pad = 5.0 * 10.0 ** (-int(kappa) - 1)
    return PartitionSpec(int(kappa), BoxSupport(np.full(d, -pad), np.full(d, 1.0 + pad)))


def ks_distance(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """``sup_x |F_n(x) - F(x)|`` for the empirical CDF of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    f = np.asarray(cdf(x), dtype=float)
    n = x.size
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def qq_pairs(samples_a, samples_b, quantile_count: int = 99) -> np.ndarray:
    """Empirical quantiles of both samples at ``k / (q + 1)``, ``k = 1..q``.

    Returns an array of shape ``(q, 2)``.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    probs = np.arange(1, quantile_count + 1) / (quantile_count + 1)
    return np.column_stack([np.quantile(a, probs), np.quantile(b, probs)])


def summarize(chains: list[np.ndarray]) -> dict:
    """Per-parameter summary of retained samples from one or more chains.

    Each element of ``chains`` has shape ``(n, k)``.  Returns mean, sd,
    2.5% and 97.5% quantiles of the pooled draws, plus R-hat (when at least
    two chains) and the mean lag-1 absolute autocorrelation per parameter.
    """
    pooled = np.vstack(chains)
    k = pooled.shape[1]
    out: dict = {
        "mean": pooled.mean(axis=0).tolist(),
        "sd": pooled.std(axis=0, ddof=1).tolist() if len(pooled) > 1 else [0.0] * k,
        "q025": np.quantile(pooled, 0.025, axis=0).tolist(),
        "q975": np.quantile(pooled, 0.975, axis=0).tolist(),
    }
    rhat, ac = [], []
    for j in range(k):
        cols = [c[:, j] for c in chains]
        try:
            rhat.append(gelman_rubin(cols) if len(cols) > 1 else None)
        except (DegenerateError, ValueError):
            rhat.append(None)
        vals = []
        for c in cols:
            try:
                vals.append(abs(lag1_autocorr(c)))
            except (DegenerateError, ValueError):
                pass
        ac.append(float(np.mean(vals)) if vals else None)
    out["rhat"] = rhat
    out["abs_lag1_ac"] = ac
    return out


def total_cells(spec: PartitionSpec) -> int:
    return cell_count(spec)
