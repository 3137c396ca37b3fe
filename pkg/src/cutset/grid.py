"""Auxiliary parameter set construction and checks.

The auxiliary set ``Phi_0`` is a handful of ``phi`` values at which the
normalising functions ``p(Y | phi)`` get estimated.  It should spread over the
bulk of ``p(phi | Z)`` so that any ``phi`` proposed by the main chain has
nearby auxiliary points.  Points are picked from posterior draws by the greedy
Max-Min rule and checked with two diagnostics: the convex-hull coverage ratio
and an inter-quartile overlap test between neighbouring conditionals.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from ._mcmc import pilot_scale, rw_metropolis
from ._rng import stream
from .errors import GridError
from .model import CutModel

__all__ = [
    "AuxGrid",
    "sample_phi_marginal",
    "max_min_select",
    "coverage_ratio",
    "overlap_summary",
    "neighbour_sets",
    "LowAcceptanceWarning",
]


class LowAcceptanceWarning(UserWarning):
    """Random-walk acceptance fell below one percent."""


@dataclass(frozen=True)
class AuxGrid:
    """Selected auxiliary points with the standardisation used to pick them.

    Attributes
    ----------
    points : ndarray, shape (m, p)
    scale_min, scale_max : ndarray, shape (p,)
        Per-coordinate range of the candidate set.
    first_index : int or None
        Index (in the candidate list) of the random first Max-Min pick.
    """

    points: np.ndarray
    scale_min: np.ndarray
    scale_max: np.ndarray
    first_index: int | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1:
            raise GridError("grid needs at least one point")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise GridError("grid points must be distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "scale_min", np.asarray(self.scale_min, dtype=float))
        object.__setattr__(self, "scale_max", np.asarray(self.scale_max, dtype=float))

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def standardized(self) -> np.ndarray:
        return (self.points - self.scale_min) / (self.scale_max - self.scale_min)

    @classmethod
    def from_points(cls, points) -> "AuxGrid":
        """Wrap explicit points; the standardisation is their own range."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 1 and pts.shape[1] > 1 and np.ndim(points) == 1:
            pts = pts.T
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        return cls(points=pts, scale_min=lo, scale_max=hi)


def sample_phi_marginal(
    model: CutModel,
    count: int,
    step_sd=None,
    seed: int = 0,
    *,
    thin: int = 10,
) -> np.ndarray:
    """Draw ``count`` points from ``p(phi | Z)`` by random-walk Metropolis.

    The chain runs ``count * thin / 0.8`` steps; the first 20% is discarded
    and the rest thinned to ``count`` draws.  When ``step_sd`` is ``None`` a
    pilot run picks it.  A :class:`LowAcceptanceWarning` is issued if fewer
    than 1% of proposals are accepted.

    Returns
    -------
    ndarray, shape (count, p)
    """
    if count < 1:
        raise GridError("count must be at least 1")
    thin = max(1, int(thin))
    rng = stream(seed, "grid")
    sup = model.phi_support
    x0 = model.initial_phi()
    if step_sd is None:
        step_sd = pilot_scale(model._log_phi_post, x0, 0.1 * sup.width, rng, sup.lower, sup.upper)
    step_sd = np.broadcast_to(np.asarray(step_sd, dtype=float), (model.p,))
    if np.any(step_sd <= 0):
        raise GridError("step_sd must be positive")
    kept = count * thin
    burn = int(np.ceil(kept / 0.8)) - kept
    draws, acc, _ = rw_metropolis(model._log_phi_post, x0, step_sd, burn + kept, rng, sup.lower, sup.upper)
    if acc < 0.01:
        warnings.warn(f"phi random walk accepted only {acc:.2%} of proposals", LowAcceptanceWarning, stacklevel=2)
    return draws[burn:][thin - 1::thin][:count].copy()


def max_min_select(candidates, m: int, seed: int = 0, *, first: int | None = None) -> AuxGrid:
    """Greedy Max-Min selection of ``m`` points from ``candidates``.

    Coordinates are standardised to ``[0, 1]`` by the candidate range.  The
    first point is drawn at random (or given by ``first``); each further pick
    is the candidate whose Euclidean distance to the nearest selected point is
    largest.  Ties go to the lowest candidate index.
    """
    cand = np.asarray(candidates, dtype=float)
    if cand.ndim == 1:
        cand = cand[:, None]
    n = cand.shape[0]
    if not 1 <= m <= n:
        raise GridError(f"m={m} must lie between 1 and the number of candidates ({n})")
    lo, hi = cand.min(axis=0), cand.max(axis=0)
    if np.any(hi <= lo):
        raise GridError("a candidate coordinate has zero range; cannot standardise")
    z = (cand - lo) / (hi - lo)
    if first is None:
        first = int(stream(seed, "grid").integers(n))
    elif not 0 <= first < n:
        raise GridError("first index out of range")
    chosen = [first]
    dmin = np.linalg.norm(z - z[first], axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(dmin))
        if dmin[nxt] == 0.0:
            raise GridError("not enough distinct candidates for the requested m")
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(z - z[nxt], axis=1))
    return AuxGrid(points=cand[chosen], scale_min=lo, scale_max=hi, first_index=first)


def neighbour_sets(grid: AuxGrid, k: int = 4) -> list[np.ndarray]:
    """Symmetric neighbour lists: ``k`` nearest points (standardised), unioned.

    ``j`` is a neighbour of ``i`` whenever either is among the other's ``k``
    nearest, so ``j in N(i)`` exactly when ``i in N(j)``.
    """
    m = grid.m
    if m == 1:
        return [np.empty(0, dtype=np.int64)]
    z = grid.standardized()
    dist = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)
    k = min(int(k), m - 1)
    adj = np.zeros((m, m), dtype=bool)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    for i in range(m):
        adj[i, order[i]] = True
    adj |= adj.T
    return [np.flatnonzero(adj[i]) for i in range(m)]


def _in_hull(point: np.ndarray, pts: np.ndarray) -> bool:
    # Feasibility of point = pts^T lam with lam >= 0, sum(lam) = 1.
    m = pts.shape[0]
    a_eq = np.vstack([pts.T, np.ones((1, m))])
    b_eq = np.append(point, 1.0)
    res = linprog(np.zeros(m), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return res.status == 0


def coverage_ratio(grid: AuxGrid, candidates) -> float:
    """Fraction of ``candidates`` inside the convex hull of the grid.

    Hull membership is a linear feasibility problem per candidate.  A grid
    with fewer than ``p + 1`` points (or an otherwise flat hull) yields 0
    with a warning.
    """
    cand = np.asarray(candidates, dtype=float)
    if cand.ndim == 1:
        cand = cand[:, None]
    if cand.shape[0] < 1:
        raise GridError("candidates must be nonempty")
    pts = grid.points
    p = pts.shape[1]
    if p > 10:
        raise GridError("coverage ratio is limited to dimension 10")
    if pts.shape[0] < p + 1 or np.linalg.matrix_rank(pts[1:] - pts[0]) < p:
        warnings.warn("grid hull is degenerate; coverage ratio set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    if p == 1:
        inside = (cand[:, 0] >= pts.min()) & (cand[:, 0] <= pts.max())
        return float(inside.mean())
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    inside = 0
    for c in cand:
        if np.all(c >= lo) and np.all(c <= hi) and _in_hull(c, pts):
            inside += 1
    return inside / cand.shape[0]


def _rhat2(a: np.ndarray, b: np.ndarray) -> float:
    n = a.shape[0]
    means = np.array([a.mean(axis=0), b.mean(axis=0)])
    w = 0.5 * (a.var(axis=0, ddof=1) + b.var(axis=0, ddof=1))
    bvar = n * means.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(((n - 1) / n * w + bvar / n) / w)
    r = np.where(w > 0, r, np.where(bvar > 0, np.inf, 1.0))
    return float(np.max(r))


def _mode(target, x0, sup) -> np.ndarray:
    # Start the internal chains at the conditional mode so that narrow
    # conditionals far from the initial value are still found.
    res = minimize(lambda x: -target(x), x0, method="L-BFGS-B", bounds=list(zip(sup.lower, sup.upper)))
    x = res.x if np.all(np.isfinite(res.x)) else x0
    return np.clip(x, sup.lower, sup.upper)


def overlap_summary(model: CutModel, grid: AuxGrid, draws_per_point: int = 1000, seed: int = 0) -> list[bool | None]:
    """Inter-quartile overlap of each conditional with its two nearest neighbours.

    For every grid point, two random-walk chains target ``p(theta | Y, phi_0^(i))``.
    The flag is ``True`` when the componentwise inter-quartile box of those
    draws intersects the boxes of both nearest grid neighbours, and ``None``
    when the two chains disagree (R-hat above 1.5).
    """
    if draws_per_point < 100:
        raise GridError("draws_per_point must be at least 100")
    sup = model.theta_support
    rng = stream(seed, "misc")
    boxes = []
    for i, phi in enumerate(grid.points):
        def target(th, phi=phi):
            return float(model._log_joint_y(th[None, :], phi)[0])

        x0 = _mode(target, model.initial_theta(), sup)
        step = pilot_scale(target, x0, 1e-3 * sup.width, rng, sup.lower, sup.upper, n_steps=2000)
        half = draws_per_point
        a, _, _ = rw_metropolis(target, x0, step, 2 * half, rng, sup.lower, sup.upper)
        x1 = np.clip(x0 + 3.0 * step * rng.standard_normal(x0.size), sup.lower, sup.upper)
        b, _, _ = rw_metropolis(target, x1, step, 2 * half, rng, sup.lower, sup.upper)
        a, b = a[half:], b[half:]
        if _rhat2(a, b) > 1.5:
            boxes.append(None)
            continue
        both = np.vstack([a, b])
        boxes.append((np.quantile(both, 0.25, axis=0), np.quantile(both, 0.75, axis=0)))
    m = grid.m
    z = grid.standardized()
    flags: list[bool | None] = []
    for i in range(m):
        if boxes[i] is None:
            flags.append(None)
            continue
        dist = np.linalg.norm(z - z[i], axis=1)
        dist[i] = np.inf
        nbrs = np.argsort(dist, kind="stable")[: min(2, m - 1)]
        ok: bool | None = True
        for j in nbrs:
            if boxes[j] is None:
                ok = None
                break
            lo = np.maximum(boxes[i][0], boxes[j][0])
            hi = np.minimum(boxes[i][1], boxes[j][1])
            if np.any(lo > hi):
                ok = False
        flags.append(ok)
    return flags
