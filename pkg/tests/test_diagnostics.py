from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cutset.diagnostics import (
    expected_cells_uniform,
    gelman_rubin,
    ks_distance,
    lag1_autocorr,
    mse_components,
    qq_pairs,
    simulate_cells_visited,
    summarize,
    unit_cube_spec,
)
from cutset.errors import DegenerateError
from cutset.grid import max_min_select, sample_phi_marginal
from cutset.model import make_conjugate_toy
from cutset.partition import cell_count
from cutset.samplers import RunConfig, run_sacut


def test_gelman_rubin_duplicated_chain():
    x = np.random.default_rng(0).normal(size=200)
    assert gelman_rubin([x, x]) == pytest.approx(math.sqrt(199 / 200))


def test_gelman_rubin_constant_chains():
    with pytest.raises(DegenerateError):
        gelman_rubin([np.ones(20), np.ones(20) * 2])


def test_gelman_rubin_iid_chains():
    rng = np.random.default_rng(1)
    r = gelman_rubin([rng.normal(size=10_000) for _ in range(4)])
    assert 0.99 <= r <= 1.05


def test_gelman_rubin_flags_separated_chains_and_split():
    rng = np.random.default_rng(2)
    assert gelman_rubin([rng.normal(size=500), rng.normal(5, 1, 500)]) > 2
    drift = np.linspace(0, 10, 1000) + rng.normal(size=1000)
    assert gelman_rubin([drift, drift + rng.normal(size=1000)], split=True) > 1.5


@settings(max_examples=30, deadline=None)
@given(st.floats(-100, 100), st.floats(0.01, 100), st.integers(0, 1000))
def test_gelman_rubin_affine_invariant(shift, scale, seed):
    rng = np.random.default_rng(seed)
    chains = [rng.normal(i * 0.3, 1, 50) for i in range(3)]
    a = gelman_rubin(chains)
    b = gelman_rubin([shift + scale * c for c in chains])
    assert a == pytest.approx(b, rel=1e-9)


def test_lag1_autocorr_examples():
    alt = np.tile([1.0, -1.0], 500)
    assert lag1_autocorr(alt) == pytest.approx(-1.0, abs=2e-3)
    iid = np.random.default_rng(3).normal(size=10_000)
    assert abs(lag1_autocorr(iid)) < 0.05
    pairs = np.repeat(np.random.default_rng(4).normal(size=500), 2)
    assert lag1_autocorr(pairs) > 0.3
    with pytest.raises(DegenerateError):
        lag1_autocorr(np.ones(10))


def test_mse_components_examples():
    assert mse_components([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse_components([0.1, -0.1], [0.0, 0.0]) == pytest.approx(0.01)
    truth = np.sin(np.arange(1, 11))
    assert mse_components(truth + 0.01, truth) == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        mse_components([1.0], [1.0, 2.0])


def test_expected_cells_examples():
    assert expected_cells_uniform(3, 2, 1) == pytest.approx(1.0)
    assert expected_cells_uniform(1, 1, 2) == pytest.approx(11 - 100 / 11)
    assert expected_cells_uniform(1, 1, 10**6) == pytest.approx(11.0)
    # default R matches the padded unit-cube partition
    assert (10**2 + 1) ** 2 == cell_count(unit_cube_spec(2, 2))


def test_expected_cells_monotone_and_bounded():
    vals = [expected_cells_uniform(2, 1, n) for n in (1, 2, 5, 10, 100, 1000, 10**5)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= 121


def test_simulated_cells_match_closed_form():
    rng = np.random.default_rng(5)
    for d, kappa, n in [(1, 1, 2), (1, 1, 10), (1, 2, 50), (2, 1, 30)]:
        spec = unit_cube_spec(d, kappa)
        # uniform on the padded box puts equal mass on every cell
        mean, se = simulate_cells_visited(lambda g, k, b=spec.support: b.uniform(g, k), spec, n, 400, rng)
        assert abs(mean - expected_cells_uniform(d, kappa, n)) < 3 * se


def test_simulated_point_mass_is_one():
    spec = unit_cube_spec(1, 2)
    mean, se = simulate_cells_visited(lambda g, k: np.full((k, 1), 0.3), spec, 100, 30, np.random.default_rng(0))
    assert mean == 1.0 and se == 0.0
    with pytest.raises(ValueError):
        simulate_cells_visited(lambda g, k: g.random((k, 1)), spec, 5, 10, np.random.default_rng(0))


def test_truncated_normal_visits_fewer_cells():
    spec = unit_cube_spec(1, 2)
    rng = np.random.default_rng(6)
    dist = stats.truncnorm(-5, 5, loc=0.5, scale=0.1)
    uni, _ = simulate_cells_visited(lambda g, k: spec.support.uniform(g, k), spec, 1000, 100, rng)
    tn, _ = simulate_cells_visited(lambda g, k: dist.rvs((k, 1), random_state=g), spec, 1000, 100, rng)
    assert uni > tn


def test_ks_distance_examples():
    x = np.random.default_rng(7).normal(size=10_000)
    assert ks_distance(x, stats.norm.cdf) < 0.02
    assert ks_distance([0.0], stats.norm.cdf) == pytest.approx(0.5)
    assert ks_distance([-50.0, -40.0], stats.uniform.cdf) == pytest.approx(1.0)
    assert ks_distance(x, stats.norm.cdf) == pytest.approx(stats.kstest(x, "norm").statistic)


def test_qq_pairs_examples():
    a = np.random.default_rng(8).normal(size=500)
    q = qq_pairs(a, a)
    assert q.shape == (99, 2) and np.array_equal(q[:, 0], q[:, 1])
    q = qq_pairs(a, a + 1.0, quantile_count=9)
    assert np.allclose(q[:, 1] - q[:, 0], 1.0)
    with pytest.raises(ValueError):
        qq_pairs([], a)


def test_qq_sacut_precisions_agree():
    m = make_conjugate_toy(1.0, 0.0, 1.0)
    grid = max_min_select(sample_phi_marginal(m, 2000, seed=1), 50, seed=1)
    runs = []
    for kappa in (3, 6):
        cfg = RunConfig(n_iterations=100_000, aux_prerun=10_000, kappa=kappa, seed=3, thin=1)
        tr = run_sacut(m, grid, cfg)
        runs.append(tr.theta[tr.retained(0.1, 1), 0])
    q = qq_pairs(*runs, quantile_count=99)
    assert np.max(np.abs(q[:, 0] - q[:, 1])) < 0.1


def test_summarize_fields():
    rng = np.random.default_rng(9)
    chains = [rng.normal(size=(400, 2)) for _ in range(3)]
    s = summarize(chains)
    assert set(s) == {"mean", "sd", "q025", "q975", "rhat", "abs_lag1_ac"}
    assert len(s["mean"]) == 2 and all(r < 1.05 for r in s["rhat"])
    assert summarize([np.ones((20, 1))])["rhat"] == [None]
