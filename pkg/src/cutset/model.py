"""Two-module cut models.

A cut model couples a trusted module ``Z | phi`` with a suspect module
``Y | theta, phi``.  The cut distribution keeps ``phi`` informed by ``Z`` only,

    p_cut(theta, phi) = p(theta | Y, phi) p(phi | Z),

so samplers need two things from a model: the unnormalised conditional
``log p(Y | theta, phi) + log p(theta)`` and the unnormalised marginal
``log p(Z | phi) + log p(phi)``.  Both live on compact boxes.

All built-in ``log_lik_y`` callables are vectorised over ``theta``: they accept
an array of shape ``(k, d)`` and return shape ``(k,)``.  ``phi`` is always a
single point of shape ``(p,)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .errors import DomainError, ModelError

__all__ = [
    "BoxSupport",
    "CutModel",
    "log_joint_y",
    "log_phi_posterior",
    "make_conjugate_toy",
    "make_random_effects_model",
    "make_regression_model",
    "make_hpv_model",
    "simulate_random_effects",
    "simulate_regression",
    "simulate_hpv",
    "read_hpv_csv",
    "write_hpv_csv",
]

_LOG_2PI = math.log(2.0 * math.pi)
# Tail mass left outside quantile-based boxes, per side.
_BOX_TAIL = 1e-8


@dataclass(frozen=True)
class BoxSupport:
    """Axis-aligned compact box ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ModelError("box bounds must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ModelError("box bounds must be finite")
        if np.any(lo >= hi):
            raise ModelError("box requires lower < upper in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def volume(self) -> float:
        return float(np.prod(self.width))

    def contains(self, x) -> bool | np.ndarray:
        """Membership test; vectorised over leading axes."""
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        return np.all(inside, axis=-1)

    def uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lower + self.width * rng.random((size, self.dim))


@dataclass(frozen=True)
class CutModel:
    """Log-density bundle for a two-module model.

    ``log_lik_y(theta, phi)`` must hold every factor that depends on ``theta``
    and varies with ``phi`` (a ``phi``-dependent prior on ``theta`` belongs
    here too); ``log_prior_theta`` holds the ``phi``-free remainder.
    """

    log_lik_y: Callable[[np.ndarray, np.ndarray], np.ndarray]
    log_lik_z: Callable[[np.ndarray], float]
    log_prior_theta: Callable[[np.ndarray], np.ndarray]
    log_prior_phi: Callable[[np.ndarray], float]
    theta_support: BoxSupport
    phi_support: BoxSupport
    exact_conditional_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None
    theta_init: np.ndarray | None = None
    phi_init: np.ndarray | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.theta_support.dim

    @property
    def p(self) -> int:
        return self.phi_support.dim

    def initial_theta(self) -> np.ndarray:
        if self.theta_init is None:
            return self.theta_support.center.copy()
        return np.array(self.theta_init, dtype=float)

    def initial_phi(self) -> np.ndarray:
        if self.phi_init is None:
            return self.phi_support.center.copy()
        return np.array(self.phi_init, dtype=float)

    # Unchecked fast paths used inside the samplers.
    def _log_joint_y(self, theta, phi):
        return self.log_lik_y(theta, phi) + self.log_prior_theta(theta)

    def _log_phi_post(self, phi) -> float:
        return float(self.log_lik_z(phi) + self.log_prior_phi(phi))


def _check(support: BoxSupport, x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != support.dim:
        raise DomainError(f"{what} has dimension {x.shape[-1]}, expected {support.dim}")
    if not np.all(support.contains(x)):
        raise DomainError(f"{what} lies outside its support box")
    return x


def log_joint_y(model: CutModel, theta, phi):
    """Unnormalised ``log p(theta | Y, phi)``: ``log p(Y|theta,phi) + log p(theta)``."""
    theta = _check(model.theta_support, theta, "theta")
    phi = _check(model.phi_support, phi, "phi")
    out = model._log_joint_y(theta, phi)
    return float(out) if np.ndim(out) == 0 else out


def log_phi_posterior(model: CutModel, phi) -> float:
    """Unnormalised ``log p(phi | Z)``."""
    phi = _check(model.phi_support, phi, "phi")
    return model._log_phi_post(phi)


def _zero_theta(theta):
    theta = np.asarray(theta, dtype=float)
    return np.zeros(theta.shape[:-1]) if theta.ndim > 1 else 0.0


def _zero_phi(phi):
    return 0.0


def _rejection_box(draw, support: BoxSupport, rng, tries: int = 1000) -> np.ndarray:
    for _ in range(tries):
        x = draw(rng)
        if support.contains(x):
            return x
    raise ModelError("exact conditional sampler could not hit the support box")


# ----------------------------------------------------------------------------
# Conjugate toy: theta | Y, phi ~ N(phi, Y^2), phi | Z ~ N(mu, tau^2)
# ----------------------------------------------------------------------------

def make_conjugate_toy(
    y_value: float,
    phi_prior_mean: float = 0.0,
    phi_prior_sd: float = 1.0,
    *,
    theta_support: BoxSupport | None = None,
    phi_support: BoxSupport | None = None,
) -> CutModel:
    """Toy model whose cut marginal of ``theta`` is ``N(mu, Y^2 + tau^2)``.

    ``p(Y | theta, phi)`` is the normal density ``N(theta; phi, Y^2)`` with a
    flat prior on ``theta``, so ``p(theta | Y, phi)`` is exactly that normal
    (truncated to the box).  ``phi`` carries a normal prior and no data.

    Default boxes extend ten standard deviations beyond the bulk:
    ``phi`` in ``mu +- 10 tau`` and ``theta`` in the ``phi`` box widened by
    ``10 |Y|`` on each side.
    """
    y = float(y_value)
    if y == 0.0 or not math.isfinite(y):
        raise ModelError("conjugate toy needs a finite, nonzero y_value")
    mu, tau = float(phi_prior_mean), float(phi_prior_sd)
    if tau <= 0:
        raise ModelError("phi_prior_sd must be positive")
    sd = abs(y)
    if phi_support is None:
        phi_support = BoxSupport([mu - 10 * tau], [mu + 10 * tau])
    if theta_support is None:
        theta_support = BoxSupport(phi_support.lower - 10 * sd, phi_support.upper + 10 * sd)
    if theta_support.dim != 1 or phi_support.dim != 1:
        raise ModelError("conjugate toy is one-dimensional in theta and phi")
    log_norm = -0.5 * _LOG_2PI - math.log(sd)

    def log_lik_y(theta, phi):
        theta = np.asarray(theta, dtype=float)
        z = (theta[..., 0] - phi[0]) / sd
        return log_norm - 0.5 * z * z

    def log_prior_phi(phi):
        z = (phi[0] - mu) / tau
        return -0.5 * _LOG_2PI - math.log(tau) - 0.5 * z * z

    def sampler(phi, rng):
        phi = np.asarray(phi, dtype=float)
        return _rejection_box(lambda g: phi + sd * g.standard_normal(1), theta_support, rng)

    return CutModel(
        log_lik_y=log_lik_y,
        log_lik_z=_zero_phi,
        log_prior_theta=_zero_theta,
        log_prior_phi=log_prior_phi,
        theta_support=theta_support,
        phi_support=phi_support,
        exact_conditional_sampler=sampler,
        theta_init=np.array([mu]),
        phi_init=np.array([mu]),
        name="conjugate",
        params={"y_value": y, "phi_prior_mean": mu, "phi_prior_sd": tau},
    )


# ----------------------------------------------------------------------------
# Normal-normal random effects, parameterised by variances (theta^2, phi^2)
# ----------------------------------------------------------------------------

def make_random_effects_model(
    y_bar: Sequence[float],
    s_sq: Sequence[float],
    group_size: int = 20,
    *,
    theta_support: BoxSupport | None = None,
) -> CutModel:
    """Random-effects model on sufficient statistics.

    ``theta`` is the random-effects variance (scalar) and ``phi`` the vector of
    residual variances.  With ``beta`` integrated out,
    ``Ybar_i ~ N(0, theta + phi_i / g)``; ``s_i^2 ~ Gamma((g-1)/2, rate=1/(2 phi_i))``.
    Priors: ``p(phi_i) ∝ 1/phi_i`` and ``p(theta | phi) ∝ 1/(theta + mean(phi)/g)``;
    the latter depends on ``phi`` and therefore lives in ``log_lik_y``.

    The ``phi`` box spans the ``1e-8`` and ``1 - 1e-8`` quantiles of each
    inverse-gamma marginal posterior.
    """
    y_bar = np.asarray(y_bar, dtype=float).ravel()
    s_sq = np.asarray(s_sq, dtype=float).ravel()
    g = int(group_size)
    if y_bar.size != s_sq.size or y_bar.size == 0:
        raise ModelError("y_bar and s_sq must be nonempty and of equal length")
    if g < 2:
        raise ModelError("group_size must be at least 2")
    if np.any(s_sq <= 0) or not np.all(np.isfinite(s_sq)):
        raise DomainError("s_sq must be strictly positive")
    n_groups = y_bar.size
    shape = 0.5 * (g - 1)
    ig = stats.invgamma(shape, scale=0.5 * s_sq)
    phi_support = BoxSupport(ig.ppf(_BOX_TAIL), ig.ppf(1.0 - _BOX_TAIL))
    phi_mode = 0.5 * s_sq / (shape + 1.0)
    ybar_sq = y_bar * y_bar
    if theta_support is None:
        theta_support = BoxSupport([0.0], [10.0 * max(1.0, float(np.mean(ybar_sq)))])
    theta_start = float(np.mean(ybar_sq) - np.mean(phi_mode) / g)
    theta_start = min(max(theta_start, theta_support.lower[0]), theta_support.upper[0])
    const_z = float(np.sum((shape - 1.0) * np.log(s_sq) - special.gammaln(shape)))

    def log_lik_y(theta, phi):
        theta = np.asarray(theta, dtype=float)
        t = theta[..., :1]
        v = t + phi / g
        ll = -0.5 * np.sum(_LOG_2PI + np.log(v) + ybar_sq / v, axis=-1)
        return ll - np.log(theta[..., 0] + np.mean(phi) / g)

    def log_lik_z(phi):
        rate = 0.5 / phi
        return float(np.sum(shape * np.log(rate) - rate * s_sq)) + const_z

    def log_prior_phi(phi):
        return -float(np.sum(np.log(phi)))

    return CutModel(
        log_lik_y=log_lik_y,
        log_lik_z=log_lik_z,
        log_prior_theta=_zero_theta,
        log_prior_phi=log_prior_phi,
        theta_support=theta_support,
        phi_support=phi_support,
        theta_init=np.array([theta_start]),
        phi_init=phi_mode,
        name="random_effects",
        params={"n_groups": n_groups, "group_size": g},
    )


def simulate_random_effects(
    n_groups: int = 100,
    group_size: int = 20,
    theta_sq: float = 2.0,
    outlier_beta: float = 10.0,
    outlier_phi_sq: float = 1.6,
    seed: int = 0,
) -> dict:
    """Simulate sufficient statistics with group 1 an outlier.

    Residual variances are ``Unif(0.5, 1.5)`` except group 1, which is fixed at
    ``outlier_phi_sq``; the random effect of group 1 is forced to ``outlier_beta``.
    """
    rng = np.random.default_rng(seed)
    phi_sq = rng.uniform(0.5, 1.5, n_groups)
    phi_sq[0] = outlier_phi_sq
    beta = rng.normal(0.0, math.sqrt(theta_sq), n_groups)
    beta[0] = outlier_beta
    y = beta[:, None] + np.sqrt(phi_sq)[:, None] * rng.standard_normal((n_groups, group_size))
    y_bar = y.mean(axis=1)
    s_sq = ((y - y_bar[:, None]) ** 2).sum(axis=1)
    return {"y_bar": y_bar, "s_sq": s_sq, "phi_sq": phi_sq, "beta": beta,
            "theta_sq": theta_sq, "group_size": group_size}


# ----------------------------------------------------------------------------
# Linear regression with strong theta/phi dependence
# ----------------------------------------------------------------------------

def make_regression_model(
    X,
    Y,
    Z,
    d: int,
    *,
    noise_var: float = 3.0,
    theta_half_width: float = 10.0,
    phi_support: BoxSupport | None = None,
) -> CutModel:
    """``Y_i ~ N(theta . X_theta_i + phi X_phi_i, noise_var)``, ``Z_j ~ N(phi, 1)``.

    ``X`` has ``d + 1`` columns: the first ``d`` multiply ``theta`` and the
    last multiplies ``phi``.  Priors are flat on the boxes.  The ``theta`` box is
    the fixed cube ``[-theta_half_width, theta_half_width]^d``; the ``phi`` box
    is ``mean(Z) +- 10 / sqrt(len(Z))``.
    """
    if not 1 <= int(d) <= 20:
        raise ModelError("d must be between 1 and 20")
    d = int(d)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    Z = np.asarray(Z, dtype=float).ravel()
    if X.ndim != 2 or X.shape[1] != d + 1 or X.shape[0] != Y.size:
        raise ModelError(f"X must have shape ({Y.size}, {d + 1})")
    if Z.size == 0 or Y.size == 0:
        raise ModelError("Y and Z must be nonempty")
    if noise_var <= 0:
        raise ModelError("noise_var must be positive")
    x_theta = np.ascontiguousarray(X[:, :d])
    x_phi = X[:, d].copy()
    theta_support = BoxSupport(np.full(d, -theta_half_width), np.full(d, theta_half_width))
    if phi_support is None:
        half = 10.0 / math.sqrt(Z.size)
        phi_support = BoxSupport([Z.mean() - half], [Z.mean() + half])
    c_y = -0.5 * Y.size * (_LOG_2PI + math.log(noise_var))
    c_z = -0.5 * Z.size * _LOG_2PI

    xtx = x_theta.T @ x_theta
    try:
        chol_prec = np.linalg.cholesky(xtx)
    except np.linalg.LinAlgError:
        chol_prec = None

    def log_lik_y(theta, phi):
        theta = np.asarray(theta, dtype=float)
        # einsum keeps per-row arithmetic independent of batch size
        mean = np.einsum("...k,ik->...i", theta, x_theta) + phi[0] * x_phi
        r = Y - mean
        return c_y - 0.5 * np.einsum("...i,...i->...", r, r) / noise_var

    def log_lik_z(phi):
        r = Z - phi[0]
        return c_z - 0.5 * float(r @ r)

    sampler = None
    if chol_prec is not None:
        def sampler(phi, rng):
            rhs = x_theta.T @ (Y - phi[0] * x_phi)
            centre = np.linalg.solve(xtx, rhs)

            def draw(g):
                # L^T x = z gives x ~ N(0, (X^T X)^{-1})
                return centre + math.sqrt(noise_var) * np.linalg.solve(chol_prec.T, g.standard_normal(d))

            return _rejection_box(draw, theta_support, rng)

    return CutModel(
        log_lik_y=log_lik_y,
        log_lik_z=log_lik_z,
        log_prior_theta=_zero_theta,
        log_prior_phi=_zero_phi,
        theta_support=theta_support,
        phi_support=phi_support,
        exact_conditional_sampler=sampler,
        theta_init=np.zeros(d),
        phi_init=np.array([Z.mean()]),
        name="regression",
        params={"d": d, "noise_var": noise_var, "n_y": int(Y.size), "n_z": int(Z.size)},
    )


def simulate_regression(d: int = 1, n_y: int = 50, n_z: int = 100, phi: float = 1.0,
                        noise_var: float = 3.0, seed: int = 0) -> dict:
    """Simulate the strong-dependence regression with ``theta_p = sin(p)``."""
    rng = np.random.default_rng(seed)
    theta = np.sin(np.arange(1, d + 1))
    X = rng.standard_normal((n_y, d + 1))
    Y = X[:, :d] @ theta + phi * X[:, d] + math.sqrt(noise_var) * rng.standard_normal(n_y)
    Z = phi + rng.standard_normal(n_z)
    return {"X": X, "Y": Y, "Z": Z, "theta": theta, "phi": phi, "d": d}


# ----------------------------------------------------------------------------
# HPV prevalence / cervical cancer incidence
# ----------------------------------------------------------------------------

def make_hpv_model(
    records: Sequence[tuple[int, int, int, float]],
    *,
    theta_support: BoxSupport | None = None,
) -> CutModel:
    """``Z_i ~ Bin(N_i, phi_i)`` and ``Y_i ~ Poisson(T_i exp(theta_1 + theta_2 phi_i))``.

    Beta(1, 1) priors on ``phi_i``, flat prior on ``theta`` over its box
    (default ``[-30, 30] x [-60, 60]``).  Each ``phi_i`` box spans the
    ``1e-8``/``1 - 1e-8`` quantiles of its Beta posterior.
    """
    recs = np.asarray(records, dtype=float)
    if recs.ndim != 2 or recs.shape[1] != 4 or recs.shape[0] == 0:
        raise ModelError("records must be a nonempty list of (Z, N, Y, T)")
    z, n, y, t = recs.T
    if np.any(z < 0) or np.any(z > n) or np.any(n < 1):
        raise ModelError("HPV records need 0 <= Z <= N and N >= 1")
    if np.any(y < 0) or np.any(t <= 0):
        raise ModelError("HPV records need Y >= 0 and T > 0")
    for col in (z, n, y):
        if np.any(col != np.round(col)):
            raise ModelError("Z, N and Y must be integers")
    post = stats.beta(1.0 + z, 1.0 + n - z)
    phi_support = BoxSupport(post.ppf(_BOX_TAIL), post.ppf(1.0 - _BOX_TAIL))
    if theta_support is None:
        theta_support = BoxSupport([-30.0, -60.0], [30.0, 60.0])
    log_t = np.log(t)
    c_y = -float(np.sum(special.gammaln(y + 1.0)))
    c_z = float(np.sum(special.gammaln(n + 1.0) - special.gammaln(z + 1.0) - special.gammaln(n - z + 1.0)))

    def log_lik_y(theta, phi):
        theta = np.asarray(theta, dtype=float)
        eta = log_t + theta[..., :1] + theta[..., 1:2] * phi
        return np.sum(y * eta - np.exp(eta), axis=-1) + c_y

    def log_lik_z(phi):
        return float(np.sum(z * np.log(phi) + (n - z) * np.log1p(-phi))) + c_z

    phi_start = np.clip((z + 1.0) / (n + 2.0), phi_support.lower, phi_support.upper)
    theta_start = _poisson_start(log_t, y, phi_start, theta_support)

    return CutModel(
        log_lik_y=log_lik_y,
        log_lik_z=log_lik_z,
        log_prior_theta=_zero_theta,
        log_prior_phi=_zero_phi,
        theta_support=theta_support,
        phi_support=phi_support,
        theta_init=theta_start,
        phi_init=phi_start,
        name="hpv",
        params={"n_cities": int(recs.shape[0])},
    )


def _poisson_start(log_t, y, phi, support: BoxSupport) -> np.ndarray:
    # Poisson log-linear fit by Newton iterations; start for the chains only.
    A = np.column_stack([np.ones_like(phi), phi])
    beta = np.array([math.log((y.sum() + 0.5) / np.exp(log_t).sum()), 0.0])
    for _ in range(50):
        mu = np.exp(log_t + A @ beta)
        step = np.linalg.lstsq(A.T @ (mu[:, None] * A), A.T @ (y - mu), rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    if not np.all(np.isfinite(beta)):
        return support.center.copy()
    return np.clip(beta, support.lower, support.upper)


def simulate_hpv(theta=(-2.0, 10.0), n_cities: int = 13, seed: int = 0) -> list[tuple[int, int, int, float]]:
    """Synthetic (Z, N, Y, T) records with known ``theta``."""
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.05, 0.25, n_cities)
    n = rng.integers(100, 1000, n_cities)
    z = rng.binomial(n, phi)
    t = np.round(rng.uniform(20.0, 200.0, n_cities), 3)
    y = rng.poisson(t * np.exp(theta[0] + theta[1] * phi))
    return [(int(a), int(b), int(c), float(e)) for a, b, c, e in zip(z, n, y, t)]


def read_hpv_csv(path) -> list[tuple[int, int, int, float]]:
    """Read records from a CSV with header ``city,Z,N,Y,T``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["city", "Z", "N", "Y", "T"]:
            raise ModelError("HPV CSV must have header city,Z,N,Y,T")
        out = []
        for row in reader:
            try:
                out.append((int(row["Z"]), int(row["N"]), int(row["Y"]), float(row["T"])))
            except ValueError as exc:
                raise ModelError(f"bad HPV record {row!r}") from exc
    return out


def write_hpv_csv(path, records) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["city", "Z", "N", "Y", "T"])
        for k, (z, n, y, t) in enumerate(records, start=1):
            w.writerow([k, int(z), int(n), int(y), repr(float(t))])
