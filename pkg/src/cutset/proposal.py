"""Importance-sampling proposal built from the auxiliary stream.

Each auxiliary draw ``(theta_j, i_j, w_{j-1})`` contributes the importance
weight ``w_{j-1}^(i) / p(Y | theta_j, phi_0^(i))`` to the cell containing
``theta_j``.  The denominator is evaluated once per (cell, grid index) pair at
the cell's representative point, so per cell ``r`` only the running sum

    a_r = sum_i A[r, i],   A[r, i] = sum_{j in r, i_j = i} w_{j-1}^(i) / p(Y | theta_r, phi_0^(i))

is needed to answer a query at a new ``phi``:

    P*(Theta_r | phi) ∝ a_r p(Y | theta_r, phi).

The floor-regularised weight process

    W_n(Theta_r) = (P*(Theta_r) + 1 / (n R)) / (1 + 1 / n)

then gives every one of the ``R`` cells positive mass, and sampling a cell from
``W_n`` followed by a uniform point in it yields the piecewise-constant
proposal density ``W_n(Theta_r) / mu(Theta_r)``.

All weights are kept in log space.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateError, DomainError
from .grid import AuxGrid
from .model import CutModel
from .partition import PartitionSpec, cell_count, lattice_keys
from .samc import AuxSample

__all__ = [
    "RoundedStore",
    "NaiveStore",
    "WeightProcess",
    "absorb",
    "pstar_cell_probs",
    "weight_process",
    "sample_pkappa",
    "density_pkappa",
    "pstar_draw_naive",
]

_MIN_PARALLEL = 2048


class _CellStore:
    """Growable table of cells with aggregated log importance weights."""

    def __init__(self, model: CutModel, grid: AuxGrid, workers: int = 1):
        self.model = model
        self.grid = grid
        self.workers = max(1, int(workers))
        self._index: dict = {}
        cap = 256
        self._points = np.empty((cap, model.d))
        self._log_a = np.empty(cap)
        self._visits = np.zeros(cap, dtype=np.int64)
        self._size = 0
        # Sparse (row, i) -> value maps: log A[r, i] and cached log p(Y | theta_r, phi_0^(i)).
        self._log_A: dict[tuple[int, int], float] = {}
        self._ll_cache: dict[tuple[int, int], float] = {}
        self.n = 0
        self.skipped = 0
        self.absorb_evals = 0
        self.query_evals = 0
        self.last_query_evals = 0
        self._pool: ThreadPoolExecutor | None = None

    # -- subclass hooks -------------------------------------------------
    def _locate(self, theta: np.ndarray):
        """Return ``(hashable key, representative point, extra)``."""
        raise NotImplementedError

    def _on_new_row(self, row: int, extra) -> None:
        pass

    # -- storage ---------------------------------------------------------
    def __len__(self) -> int:
        return self._size

    @property
    def points(self) -> np.ndarray:
        return self._points[: self._size]

    @property
    def log_a(self) -> np.ndarray:
        return self._log_a[: self._size]

    @property
    def visits(self) -> np.ndarray:
        return self._visits[: self._size]

    def _grow(self) -> None:
        cap = 2 * self._points.shape[0]
        for name in ("_points", "_log_a", "_visits"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self._size] = old[: self._size]
            setattr(self, name, new)

    def absorb(self, sample: AuxSample) -> bool:
        """Fold one auxiliary draw into the store; returns ``False`` if skipped."""
        key, point, extra = self._locate(np.asarray(sample.theta, dtype=float))
        i = int(sample.phi_index)
        row = self._index.get(key)
        ll = self._ll_cache.get((row, i)) if row is not None else None
        if ll is None:
            ll = float(self.model.log_lik_y(point[None, :], self.grid.points[i])[0])
            self.absorb_evals += 1
            if not math.isfinite(ll):
                self.skipped += 1
                return False
        if row is None:
            if self._size == self._points.shape[0]:
                self._grow()
            row = self._size
            self._size += 1
            self._index[key] = row
            self._points[row] = point
            self._log_a[row] = -np.inf
            self._on_new_row(row, extra)
        self._ll_cache[(row, i)] = ll
        v = float(sample.log_w[i]) - ll
        self._log_A[(row, i)] = np.logaddexp(self._log_A.get((row, i), -np.inf), v)
        self._log_a[row] = np.logaddexp(self._log_a[row], v)
        self._visits[row] += 1
        self.n += 1
        return True

    # -- queries ---------------------------------------------------------
    def _eval_points(self, phi: np.ndarray) -> np.ndarray:
        pts = self.points
        k = pts.shape[0]
        f = self.model.log_lik_y
        if self.workers == 1 or k < _MIN_PARALLEL:
            return np.asarray(f(pts, phi), dtype=float)
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
        bounds = np.linspace(0, k, self.workers + 1).astype(int)
        parts = self._pool.map(lambda ab: np.asarray(f(pts[ab[0]:ab[1]], phi), dtype=float),
                               zip(bounds[:-1], bounds[1:]))
        return np.concatenate(list(parts))

    def log_cell_probs(self, phi) -> np.ndarray:
        """Normalised log ``P*`` over stored cells, in row order."""
        if self._size == 0:
            raise DegenerateError("degenerate proposal: the store is empty")
        phi = np.asarray(phi, dtype=float)
        ll = self._eval_points(phi)
        self.last_query_evals = ll.size
        self.query_evals += ll.size
        log_num = self.log_a + ll
        total = logsumexp(log_num)
        if not math.isfinite(total):
            raise DegenerateError("degenerate proposal: all importance weights vanish")
        return log_num - total

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def entries(self) -> Iterable[tuple[int, int, float, float]]:
        """``(row, i, log A[r, i], cached log-likelihood)`` sorted by ``(row, i)``."""
        for (row, i) in sorted(self._log_A):
            yield row, i, self._log_A[(row, i)], self._ll_cache[(row, i)]


class RoundedStore(_CellStore):
    """Store aggregated over the cells of a rounding partition.

    Parameters
    ----------
    spec : PartitionSpec
        Partition of ``theta``'s box.
    model, grid
        Model supplying ``log_lik_y`` and the auxiliary points.
    workers : int
        Threads used for per-query likelihood evaluation.  Results do not
        depend on this number.
    """

    def __init__(self, spec: PartitionSpec, model: CutModel, grid: AuxGrid, workers: int = 1):
        super().__init__(model, grid, workers)
        self.spec = spec
        self.R = cell_count(spec)
        self._keys = np.empty((self._points.shape[0], spec.d), dtype=np.int64)

    def _locate(self, theta):
        key = lattice_keys(theta, self.spec)
        return key.tobytes(), self.spec.representative(key), key

    def _grow(self) -> None:
        super()._grow()
        new = np.empty((self._points.shape[0], self.spec.d), dtype=np.int64)
        new[: self._size] = self._keys[: self._size]
        self._keys = new

    def _on_new_row(self, row, extra) -> None:
        self._keys[row] = extra

    @property
    def keys(self) -> np.ndarray:
        """Integer lattice keys of stored cells, in row order."""
        return self._keys[: self._size]

    def write_snapshot(self, path) -> None:
        """CSV with one row per (cell, grid index): lattice key, i, log A, log-likelihood."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"key_{k}" for k in range(self.spec.d)] + ["i", "log_A", "log_lik"])
            keys = self.keys
            for row, i, la, ll in self.entries():
                w.writerow([int(v) for v in keys[row]] + [i, repr(float(la)), repr(float(ll))])


class NaiveStore(_CellStore):
    """Store keyed by the exact auxiliary draw (no rounding).

    Repeated draws of the same ``theta`` (a rejected auxiliary move) share one
    entry, which leaves the discrete measure unchanged.
    """

    def _locate(self, theta):
        return theta.tobytes(), theta, None


# ----------------------------------------------------------------------------
# functional interface
# ----------------------------------------------------------------------------

def absorb(store: _CellStore, sample: AuxSample, model: CutModel | None = None) -> _CellStore:
    """Fold ``sample`` into ``store`` (in place) and return the store."""
    store.absorb(sample)
    return store


def pstar_cell_probs(store: _CellStore, phi_query, model: CutModel | None = None) -> np.ndarray:
    """``P*`` probabilities over the stored cells (row order), summing to one."""
    return np.exp(store.log_cell_probs(phi_query))


@dataclass(frozen=True)
class WeightProcess:
    """Floor-regularised cell weights for one query.

    Attributes
    ----------
    keys : ndarray, shape (k, d)
        Lattice keys of visited cells.
    probs : ndarray, shape (k,)
        ``P*`` over visited cells.
    n : int
        Number of absorbed auxiliary draws.
    R : int
        Total number of cells.
    """

    keys: np.ndarray
    probs: np.ndarray
    n: int
    R: int
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("weight process needs n >= 1")
        cdf = np.cumsum(self.probs)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def floor(self) -> float:
        """Weight of a cell that has never been visited."""
        return (1.0 / (self.n * self.R)) / (1.0 + 1.0 / self.n)

    @property
    def weights(self) -> np.ndarray:
        """Weights of the visited cells."""
        return (self.probs + 1.0 / (self.n * self.R)) / (1.0 + 1.0 / self.n)

    def total(self) -> float:
        """Sum of weights over all ``R`` cells."""
        unvisited = self.R - len(self.probs)
        return math.fsum(self.weights) + unvisited * self.floor

    def weight_of(self, key) -> float:
        key = np.asarray(key, dtype=np.int64)
        hit = np.flatnonzero(np.all(self.keys == key, axis=1))
        if hit.size:
            return float(self.weights[hit[0]])
        return self.floor


def weight_process(cell_probs, n: int, R_kappa: int, keys=None) -> WeightProcess:
    """Build ``W_n`` from ``P*`` cell probabilities."""
    probs = np.asarray(cell_probs, dtype=float)
    if keys is None:
        keys = np.arange(probs.size)[:, None]
    return WeightProcess(keys=np.asarray(keys, dtype=np.int64), probs=probs, n=int(n), R=int(R_kappa))


def sample_pkappa(w: WeightProcess, spec: PartitionSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw ``theta`` from the piecewise-constant proposal.

    With probability ``n / (n + 1)`` the cell comes from ``P*``; otherwise it
    is uniform over all ``R`` cells (independent uniform key per coordinate).
    The point is then uniform in the cell clipped to the box.  Every call
    consumes ``2 + 2 d`` uniforms.
    """
    d = spec.d
    u = rng.random(2 + 2 * d)
    if u[0] * (w.n + 1) < w.n:
        cdf = w._cdf
        idx = int(np.searchsorted(cdf, u[1] * cdf[-1], side="right"))
        key = w.keys[min(idx, len(cdf) - 1)]
    else:
        span = spec.keys_per_dim
        key = spec.key_lo + np.minimum((u[2:2 + d] * span).astype(np.int64), span - 1)
    lo, hi = spec.bounds(key)
    return lo + u[2 + d:] * (hi - lo)


def density_pkappa(w: WeightProcess, spec: PartitionSpec, theta) -> float:
    """Proposal density ``W_n(Theta_r) / mu(Theta_r)`` at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(spec.support.contains(theta)):
        raise DomainError("theta lies outside the partitioned box")
    key = lattice_keys(theta, spec)
    return w.weight_of(key) / float(spec.measures(key))


def pstar_draw_naive(store: NaiveStore, phi_query, model: CutModel | None = None,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Resample one stored auxiliary ``theta`` with weight ``P*`` at ``phi_query``.

    Consumes one uniform.
    """
    if rng is None:
        raise ValueError("rng is required")
    probs = pstar_cell_probs(store, phi_query)
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return store.points[min(idx, len(cdf) - 1)].copy()
