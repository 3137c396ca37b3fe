"""Rounding partition of a box and simple-function density approximation.

Rounding every coordinate to ``kappa`` decimal places,

    R_kappa(psi) = floor(10**kappa * psi + 0.5) / 10**kappa,

maps the box ``Theta`` onto a finite lattice.  The preimage of each lattice
point is a half-open cube of side ``10**-kappa`` intersected with the box
(a *partial* cube at the edges).  Cells are identified by their integer
lattice key ``k = floor(10**kappa * psi + 0.5)``, never by a float center, so
equality and hashing are exact.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import PartitionError, QuadratureError
from .model import BoxSupport

__all__ = [
    "PartitionSpec",
    "SimpleFunction",
    "round_kappa",
    "lattice_keys",
    "cell_measure",
    "cell_count",
    "enumerate_cells",
    "simple_function_approx",
    "approx_error_bound",
]

_SNAP_RTOL = 4 * np.finfo(float).eps
_MAX_ENUM = 2 ** 63


def _snap(x: np.ndarray) -> np.ndarray:
    # Values within rounding noise of an integer are treated as that integer,
    # so 0.45 * 10 + 0.5 lands on 5 and not on 4.999999999.
    r = np.round(x)
    close = np.abs(x - r) <= _SNAP_RTOL * np.maximum(1.0, np.abs(x))
    return np.where(close, r, x)


@dataclass(frozen=True)
class PartitionSpec:
    """Per-dimension rounding precision over a box.

    Parameters
    ----------
    kappa : int or sequence of int
        Decimal places per coordinate; a scalar is broadcast to every
        dimension.
    support : BoxSupport
        The box being partitioned.
    """

    kappa: np.ndarray
    support: BoxSupport
    scale: np.ndarray = field(init=False, repr=False)
    key_lo: np.ndarray = field(init=False, repr=False)
    key_hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = self.support.dim
        k = np.asarray(self.kappa)
        if k.ndim == 0:
            k = np.full(d, int(k))
        if k.shape != (d,):
            raise PartitionError(f"kappa must be a scalar or have length {d}")
        if np.any(k != np.round(k)) or np.any(k < 0):
            raise PartitionError("kappa entries must be nonnegative integers")
        k = k.astype(np.int64)
        if np.any(k > 15):
            raise PartitionError("kappa above 15 exceeds double precision")
        scale = 10.0 ** k
        lo = np.floor(_snap(self.support.lower * scale + 0.5)).astype(np.int64)
        hi = np.ceil(_snap(self.support.upper * scale + 0.5)).astype(np.int64) - 1
        hi = np.maximum(hi, lo)
        for name, val in (("kappa", k), ("scale", scale), ("key_lo", lo), ("key_hi", hi)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def d(self) -> int:
        return self.support.dim

    @property
    def keys_per_dim(self) -> np.ndarray:
        return self.key_hi - self.key_lo + 1

    def centers(self, keys) -> np.ndarray:
        """Float centers ``k / 10**kappa`` for integer keys (shape ``(..., d)``)."""
        return np.asarray(keys) / self.scale

    def bounds(self, keys) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper edges of the (partial) cells with the given keys."""
        keys = np.asarray(keys, dtype=float)
        lo = np.maximum(self.support.lower, (keys - 0.5) / self.scale)
        hi = np.minimum(self.support.upper, (keys + 0.5) / self.scale)
        return lo, hi

    def measures(self, keys) -> np.ndarray:
        """Lebesgue measure of each cell; vectorised over leading axes."""
        lo, hi = self.bounds(keys)
        return np.prod(hi - lo, axis=-1)

    def representative(self, keys) -> np.ndarray:
        """Cell center clipped into the box (always a point of ``Theta``)."""
        return np.clip(self.centers(keys), self.support.lower, self.support.upper)


def lattice_keys(theta, spec: PartitionSpec) -> np.ndarray:
    """Integer lattice keys of ``theta`` (shape ``(..., d)``), clipped to the box."""
    theta = np.asarray(theta, dtype=float)
    k = np.floor(_snap(theta * spec.scale + 0.5)).astype(np.int64)
    return np.clip(k, spec.key_lo, spec.key_hi)


def round_kappa(theta, spec: PartitionSpec) -> np.ndarray:
    """Center of the cell containing ``theta``.

    Examples
    --------
    >>> spec = PartitionSpec(1, BoxSupport([-1.0], [1.0]))
    >>> round_kappa([0.45], spec)
    array([0.5])
    """
    return spec.centers(lattice_keys(theta, spec))


def _center_to_key(spec: PartitionSpec, center) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    if c.shape[-1:] != (spec.d,):
        raise PartitionError(f"center must have dimension {spec.d}")
    k = np.round(c * spec.scale)
    if np.any(np.abs(k - c * spec.scale) > 1e-6) or np.any(k < spec.key_lo) or np.any(k > spec.key_hi):
        raise PartitionError("point is not a cell center of this partition")
    return k.astype(np.int64)


def cell_measure(spec: PartitionSpec, center) -> float:
    """Measure of the (partial) cell whose center is ``center``."""
    return float(spec.measures(_center_to_key(spec, center)))


def cell_count(spec: PartitionSpec) -> int:
    """Exact number of cells, as an unbounded Python ``int``."""
    return math.prod(int(n) for n in spec.keys_per_dim)


def enumerate_cells(spec: PartitionSpec) -> tuple[int, Iterator[np.ndarray]]:
    """Cell count and an iterator over all cell centers in lexicographic key order.

    Raises
    ------
    PartitionError
        If the count does not fit in a signed 64-bit integer.
    """
    count = cell_count(spec)
    if count >= _MAX_ENUM:
        raise PartitionError(f"partition has {count} cells, too many to enumerate")
    ranges = [range(int(a), int(b) + 1) for a, b in zip(spec.key_lo, spec.key_hi)]

    def gen():
        for key in itertools.product(*ranges):
            yield np.asarray(key, dtype=float) / spec.scale

    return count, gen()


def _all_keys(spec: PartitionSpec) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(spec.key_lo, spec.key_hi)], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass(frozen=True)
class SimpleFunction:
    """Piecewise-constant density, one value per cell of ``spec``.

    ``values`` is a dense array with one axis per dimension, indexed by
    ``key - spec.key_lo``.
    """

    spec: PartitionSpec
    values: np.ndarray
    cell_probs: np.ndarray

    def __call__(self, theta) -> np.ndarray | float:
        keys = lattice_keys(theta, self.spec) - self.spec.key_lo
        out = self.values[tuple(np.moveaxis(keys, -1, 0))]
        return float(out) if np.ndim(out) == 0 else out

    def integral(self) -> float:
        return math.fsum(self.cell_probs.ravel())


def simple_function_approx(
    f: Callable[[np.ndarray], np.ndarray],
    spec: PartitionSpec,
    quad_points_per_cell: int = 8,
    max_cells: int = 2_000_000,
) -> SimpleFunction:
    """Simple-function approximation ``S_kappa(f)`` of a density on the box.

    The value on each cell is the cell's probability under ``f`` (tensor
    Gauss-Legendre quadrature with ``quad_points_per_cell`` nodes per axis)
    divided by the cell measure.  ``f`` takes points of shape ``(k, d)``.

    Raises
    ------
    QuadratureError
        If the total quadrature mass is more than ``1e-3`` away from one.
    """
    q = int(quad_points_per_cell)
    if q < 8:
        raise QuadratureError("quad_points_per_cell must be at least 8")
    count = cell_count(spec)
    if count > max_cells:
        raise QuadratureError(f"{count} cells exceed the quadrature budget of {max_cells}")
    d = spec.d
    nodes, wts = np.polynomial.legendre.leggauss(q)
    keys = _all_keys(spec)
    lo, hi = spec.bounds(keys)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    node_grid = np.stack(np.meshgrid(*([nodes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    wt_grid = np.prod(np.stack(np.meshgrid(*([wts] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=-1)
    probs = np.empty(len(keys))
    chunk = max(1, 200_000 // len(wt_grid))
    for s in range(0, len(keys), chunk):
        pts = mid[s:s + chunk, None, :] + half[s:s + chunk, None, :] * node_grid[None]
        vals = np.asarray(f(pts.reshape(-1, d)), dtype=float).reshape(pts.shape[0], -1)
        probs[s:s + chunk] = (vals @ wt_grid) * np.prod(half[s:s + chunk], axis=-1)
    mass = math.fsum(probs)
    if not math.isfinite(mass) or abs(mass - 1.0) > 1e-3:
        raise QuadratureError(f"quadrature mass {mass!r} deviates from 1 by more than 1e-3")
    probs = probs / mass
    values = probs / spec.measures(keys)
    shape = tuple(int(n) for n in spec.keys_per_dim)
    return SimpleFunction(spec=spec, values=values.reshape(shape), cell_probs=probs.reshape(shape))


def approx_error_bound(grad_sup: float, d: int, kappa) -> float:
    """Sup-norm error bound for ``S_kappa(f)``: ``sup|grad f| * cell diameter``.

    With a common ``kappa`` the diameter is ``sqrt(d) / 10**kappa``; with a
    per-dimension vector it is ``sqrt(sum_k 10**(-2 kappa_k))``.
    """
    if grad_sup < 0:
        raise ValueError("grad_sup must be nonnegative")
    k = np.asarray(kappa, dtype=float)
    if k.ndim == 0:
        return float(grad_sup) * math.sqrt(d) / 10.0 ** float(k)
    if k.size != d:
        raise ValueError("kappa vector length must equal d")
    return float(grad_sup) * math.sqrt(float(np.sum(10.0 ** (-2.0 * k))))
