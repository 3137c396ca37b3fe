"""Small random-walk Metropolis helper shared by pilot and baseline runs."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np


def rw_metropolis(
    log_target: Callable[[np.ndarray], float],
    x0: np.ndarray,
    step_sd: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    adapt: bool = False,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Run a Gaussian random-walk Metropolis chain.

    Proposals leaving ``[lower, upper]`` are rejected.  With ``adapt`` the
    per-coordinate step is rescaled every 100 steps towards a 0.3 acceptance
    rate (use only for pilot runs: the chain is then not Markov).

    Returns
    -------
    samples : ndarray, shape (n_steps, dim)
    acceptance : float
    step_sd : ndarray
        Final step size (changed only when ``adapt`` is set).
    """
    x = np.array(x0, dtype=float)
    dim = x.size
    step = np.broadcast_to(np.asarray(step_sd, dtype=float), (dim,)).copy()
    lp = log_target(x)
    out = np.empty((n_steps, dim))
    z_all = rng.standard_normal((n_steps, dim))
    u_all = rng.random(n_steps)
    accepted = 0
    window = 0
    for t in range(n_steps):
        prop = x + step * z_all[t]
        ok = True
        if lower is not None and np.any(prop < lower):
            ok = False
        if upper is not None and np.any(prop > upper):
            ok = False
        if ok:
            lp_prop = log_target(prop)
            if lp_prop >= lp or u_all[t] < math.exp(lp_prop - lp):
                x, lp = prop, lp_prop
                accepted += 1
                window += 1
        out[t] = x
        if adapt and (t + 1) % 100 == 0:
            rate = window / 100.0
            step *= math.exp(rate - 0.3)
            window = 0
    return out, accepted / max(n_steps, 1), step


def pilot_scale(
    log_target: Callable[[np.ndarray], float],
    x0: np.ndarray,
    initial_sd: np.ndarray,
    rng: np.random.Generator,
    lower: np.ndarray,
    upper: np.ndarray,
    n_steps: int = 4000,
) -> np.ndarray:
    """Estimate a random-walk step ``2.38 / sqrt(dim) * sd`` from a pilot run."""
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    _, _, step = rw_metropolis(log_target, x0, initial_sd, n_steps // 2, rng, lower, upper, adapt=True)
    samples, _, _ = rw_metropolis(log_target, x0, step, n_steps, rng, lower, upper, adapt=True)
    sd = samples[n_steps // 2:].std(axis=0)
    fallback = np.asarray(step, dtype=float) / 2.38
    sd = np.where(sd > 0, sd, fallback)
    sd = np.minimum(sd, (np.asarray(upper) - np.asarray(lower)))
    return 2.38 / math.sqrt(dim) * sd
