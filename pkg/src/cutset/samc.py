"""Auxiliary stochastic approximation Monte Carlo chain.

The chain lives on ``Theta x Phi_0`` and targets, at step ``n``,

    p_n(theta, i) ∝ p(Y | theta, phi_0^(i)) p(theta) / w_{n-1}^(i),

where the weights are updated after every step by

    log w_n^(i) = log w_{n-1}^(i) + xi_n (1{i visited} - 1/m),
    xi_n = n0 / max(n0, n).

As the visit frequencies equalise, ``w^(i)`` becomes proportional to the
normalising function ``p(Y | phi_0^(i))``.  Grid indices are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .grid import AuxGrid, neighbour_sets
from .model import CutModel

__all__ = [
    "SamcState",
    "AuxSample",
    "SamcChain",
    "xi",
    "update_weights",
    "samc_step",
    "visit_frequencies",
    "frequencies_diverge",
]


def xi(n: int, n0: int) -> float:
    """Gain ``n0 / max(n0, n)``."""
    if n < 1 or n0 < 1:
        raise ValueError("xi needs n >= 1 and n0 >= 1")
    return n0 / max(n0, n)


def update_weights(log_w, visited_index: int, n: int, n0: int) -> np.ndarray:
    """One stochastic approximation update, re-centred so that ``max == 0``."""
    log_w = np.array(log_w, dtype=float)
    m = log_w.size
    if not 0 <= visited_index < m:
        raise IndexError("visited_index out of range")
    _update_inplace(log_w, visited_index, xi(n, n0))
    return log_w


def _update_inplace(log_w: np.ndarray, i: int, gain: float) -> None:
    log_w -= gain / log_w.size
    log_w[i] += gain
    log_w -= log_w.max()


@dataclass
class SamcState:
    """Mutable state of the auxiliary chain.

    Attributes
    ----------
    theta : ndarray, shape (d,)
    phi_index : int
        Current auxiliary point, 0-based.
    log_w : ndarray, shape (m,)
        Log weights, kept with maximum 0.
    n : int
        Number of completed steps.
    n0 : int
        Gain constant.
    p_mix : float
        Probability of a ``theta`` move (otherwise a neighbour jump in ``phi``).
    theta_step_sd : ndarray, shape (d,)
    log_target : float
        Cached ``log p(Y | theta, phi_0^(i)) + log p(theta)`` at the current state.
    """

    theta: np.ndarray
    phi_index: int
    log_w: np.ndarray
    n: int = 0
    n0: int = 1000
    p_mix: float = 0.75
    theta_step_sd: np.ndarray = field(default_factory=lambda: np.ones(1))
    log_target: float = float("nan")

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        self.log_w = np.array(self.log_w, dtype=float)
        self.theta_step_sd = np.broadcast_to(np.asarray(self.theta_step_sd, dtype=float), self.theta.shape).copy()
        if not 0 < self.p_mix <= 1:
            raise ValueError("p_mix must lie in (0, 1]")
        if not 0 <= self.phi_index < self.log_w.size:
            raise ValueError("phi_index out of range")


class AuxSample(NamedTuple):
    """One emitted auxiliary draw.

    ``log_w`` is the weight vector in force *before* the update that
    followed this draw.
    """

    theta: np.ndarray
    phi_index: int
    log_w: np.ndarray


def samc_step(
    state: SamcState,
    model: CutModel,
    grid: AuxGrid,
    rng: np.random.Generator,
    neighbours: list[np.ndarray] | None = None,
) -> AuxSample:
    """Advance ``state`` in place by one step and return the emitted sample.

    Every call consumes exactly three uniforms and ``d`` normals from ``rng``.
    """
    if neighbours is None:
        neighbours = neighbour_sets(grid)
    if math.isnan(state.log_target):
        state.log_target = _log_target(model, grid, state.theta, state.phi_index)
    u = rng.random(3)
    z = rng.standard_normal(state.theta.size)
    i = state.phi_index
    nbrs = neighbours[i]
    if u[0] < state.p_mix or nbrs.size == 0:
        prop = state.theta + state.theta_step_sd * z
        sup = model.theta_support
        if np.all(prop >= sup.lower) and np.all(prop <= sup.upper):
            lt = _log_target(model, grid, prop, i)
            if _accept(lt - state.log_target, u[2]):
                state.theta = prop
                state.log_target = lt
    else:
        j = int(nbrs[min(int(u[1] * nbrs.size), nbrs.size - 1)])
        lt = _log_target(model, grid, state.theta, j)
        log_ratio = (lt - state.log_w[j]) - (state.log_target - state.log_w[i])
        log_ratio += math.log(nbrs.size) - math.log(neighbours[j].size)
        if _accept(log_ratio, u[2]):
            state.phi_index = j
            state.log_target = lt
    emitted = AuxSample(state.theta, state.phi_index, state.log_w.copy())
    state.n += 1
    _update_inplace(state.log_w, state.phi_index, xi(state.n, state.n0))
    return emitted


def _log_target(model: CutModel, grid: AuxGrid, theta: np.ndarray, i: int) -> float:
    return float(model._log_joint_y(theta[None, :], grid.points[i])[0])


def _accept(log_ratio: float, u: float) -> bool:
    if log_ratio >= 0:
        return True
    if not math.isfinite(log_ratio):
        return False
    return u < math.exp(log_ratio)


class SamcChain:
    """Convenience driver bundling state, model, grid, neighbours and stream."""

    def __init__(
        self,
        model: CutModel,
        grid: AuxGrid,
        rng: np.random.Generator,
        *,
        n0: int = 1000,
        p_mix: float = 0.75,
        theta_step_sd=1.0,
        neighbours: int = 4,
        theta0=None,
        phi_index0: int | None = None,
    ):
        self.model = model
        self.grid = grid
        self.rng = rng
        self.neighbours = neighbour_sets(grid, neighbours)
        theta = model.initial_theta() if theta0 is None else np.asarray(theta0, dtype=float)
        if phi_index0 is None:
            centre = model.initial_phi()
            phi_index0 = int(np.argmin(np.linalg.norm(grid.points - centre, axis=1)))
        self.state = SamcState(
            theta=theta,
            phi_index=phi_index0,
            log_w=np.zeros(grid.m),
            n0=n0,
            p_mix=p_mix if grid.m > 1 else 1.0,
            theta_step_sd=theta_step_sd,
        )
        self.visits = np.zeros(grid.m, dtype=np.int64)

    def step(self) -> AuxSample:
        s = samc_step(self.state, self.model, self.grid, self.rng, self.neighbours)
        self.visits[s.phi_index] += 1
        return s

    def run(self, n_steps: int) -> None:
        """Advance without keeping the emitted samples."""
        for _ in range(n_steps):
            self.step()


def visit_frequencies(trace, m: int | None = None) -> np.ndarray:
    """Empirical visit frequency of each grid index in ``trace`` (0-based)."""
    t = np.asarray(trace, dtype=np.int64).ravel()
    if t.size == 0:
        raise ValueError("trace must be nonempty")
    if m is None:
        m = int(t.max()) + 1
    return np.bincount(t, minlength=m)[:m] / t.size


def frequencies_diverge(freq, rel_tol: float = 0.2) -> bool:
    """``True`` when any frequency leaves ``1/m * (1 +- rel_tol)``."""
    freq = np.asarray(freq, dtype=float)
    target = 1.0 / freq.size
    return bool(np.any(np.abs(freq - target) > rel_tol * target))
