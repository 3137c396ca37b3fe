from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutset.errors import GridError
from cutset.grid import (
    AuxGrid,
    LowAcceptanceWarning,
    coverage_ratio,
    max_min_select,
    neighbour_sets,
    overlap_summary,
    sample_phi_marginal,
)
from cutset.model import BoxSupport, CutModel, make_conjugate_toy


def _phi_only_model(phi_box, log_post, theta_ll=None):
    return CutModel(
        log_lik_y=theta_ll or (lambda th, ph: -0.5 * np.sum(np.asarray(th) ** 2, axis=-1)),
        log_lik_z=log_post,
        log_prior_theta=lambda th: 0.0,
        log_prior_phi=lambda ph: 0.0,
        theta_support=BoxSupport([-10.0], [10.0]),
        phi_support=phi_box,
        phi_init=phi_box.center,
    )


def test_sample_phi_marginal_normal_mean():
    m = _phi_only_model(BoxSupport([-10.0], [10.0]), lambda ph: -0.5 * float(ph[0] ** 2))
    x = sample_phi_marginal(m, 2000, step_sd=2.4, seed=1, thin=5)
    assert x.shape == (2000, 1)
    # thinned draws are close to independent; allow for residual correlation
    assert abs(x.mean()) < 3 * 2 / math.sqrt(2000)


def test_sample_phi_marginal_narrow_box_and_warning():
    box = BoxSupport([0.0], [0.01])
    m = _phi_only_model(box, lambda ph: 0.0)
    with pytest.warns(LowAcceptanceWarning):
        x = sample_phi_marginal(m, 50, step_sd=100.0, seed=2)
    assert np.all((x >= 0.0) & (x <= 0.01))


def test_sample_phi_marginal_deterministic():
    m = make_conjugate_toy(1.0)
    a = sample_phi_marginal(m, 100, seed=3)
    b = sample_phi_marginal(m, 100, seed=3)
    assert a.tobytes() == b.tobytes()


def test_max_min_simple_case():
    g = max_min_select([0.0, 0.9, 1.0], 2, first=0)
    assert sorted(g.points[:, 0]) == [0.0, 1.0]


def test_max_min_all_candidates():
    cand = np.random.default_rng(0).normal(size=(7, 2))
    g = max_min_select(cand, 7, seed=5)
    assert sorted(map(tuple, g.points)) == sorted(map(tuple, cand))


def _brute_greedy(cand, m, first):
    z = (cand - cand.min(0)) / (cand.max(0) - cand.min(0))
    chosen = [first]
    while len(chosen) < m:
        best, best_d = None, -1.0
        for j in range(len(z)):
            dj = min(math.dist(z[j], z[c]) for c in chosen)
            if dj > best_d:
                best, best_d = j, dj
        chosen.append(best)
    return cand[chosen]


def test_max_min_matches_brute_force():
    cand = np.random.default_rng(1).uniform(size=(20, 2))
    g = max_min_select(cand, 5, first=3)
    assert np.array_equal(g.points, _brute_greedy(cand, 5, 3))


def test_max_min_random_first_is_recorded():
    cand = np.random.default_rng(2).uniform(size=(30, 1))
    g = max_min_select(cand, 4, seed=9)
    assert g.first_index is not None
    assert np.array_equal(g.points[0], cand[g.first_index])


def test_max_min_zero_range_error():
    with pytest.raises(GridError):
        max_min_select(np.column_stack([np.arange(5.0), np.ones(5)]), 2, seed=0)
    with pytest.raises(GridError):
        max_min_select([0.0, 1.0], 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 6))
def test_max_min_permutation_invariant(seed, m):
    rng = np.random.default_rng(seed)
    cand = rng.uniform(size=(12, 2))
    perm = rng.permutation(12)
    a = max_min_select(cand, m, first=0)
    b = max_min_select(cand[perm], m, first=int(np.flatnonzero(perm == 0)[0]))
    assert sorted(map(tuple, a.points)) == sorted(map(tuple, b.points))


def test_neighbour_sets_are_symmetric():
    g = AuxGrid.from_points(np.random.default_rng(3).uniform(size=(15, 2)))
    nb = neighbour_sets(g, 4)
    for i, ni in enumerate(nb):
        assert i not in ni and len(ni) >= 4
        for j in ni:
            assert i in nb[j]


def test_coverage_ratio_examples():
    cand = np.random.default_rng(4).normal(size=200)
    assert coverage_ratio(AuxGrid.from_points([[cand.min()], [cand.max()]]), cand) == 1.0
    q1, q3 = np.quantile(cand, [0.25, 0.75])
    expect = np.mean((cand >= q1) & (cand <= q3))
    assert coverage_ratio(AuxGrid.from_points([[q1], [q3]]), cand) == pytest.approx(expect)


def test_coverage_ratio_grid_equals_candidates_2d():
    cand = np.random.default_rng(5).normal(size=(40, 2))
    assert coverage_ratio(AuxGrid.from_points(cand), cand) == 1.0


def test_coverage_ratio_degenerate_hull_warns():
    cand = np.random.default_rng(6).normal(size=(20, 2))
    with pytest.warns(RuntimeWarning):
        assert coverage_ratio(AuxGrid.from_points(cand[:2]), cand) == 0.0


def test_coverage_ratio_monotone_in_grid():
    cand = np.random.default_rng(7).normal(size=(150, 2))
    order = max_min_select(cand, 12, first=0).points
    ratios = [coverage_ratio(AuxGrid.from_points(order[:k]), cand) for k in range(3, 13)]
    assert all(a <= b for a, b in zip(ratios, ratios[1:]))


def test_overlap_independent_of_phi():
    m = _phi_only_model(BoxSupport([-5.0], [5.0]), lambda ph: 0.0)
    g = AuxGrid.from_points([[-2.0], [0.0], [2.0], [4.0]])
    assert overlap_summary(m, g, 300, seed=0) == [True] * 4


def test_overlap_conjugate_close_points():
    m = make_conjugate_toy(1.0, 0.0, 1.0)
    g = AuxGrid.from_points([[0.0], [0.1], [0.2], [0.3]])
    assert overlap_summary(m, g, 300, seed=1) == [True] * 4


def test_overlap_conjugate_far_points():
    m = make_conjugate_toy(0.01, 0.0, 1.0)
    g = AuxGrid.from_points([[0.0], [1.0], [2.0], [3.0]])
    assert overlap_summary(m, g, 300, seed=2) == [False] * 4


def test_overlap_requires_enough_draws():
    m = make_conjugate_toy(1.0)
    with pytest.raises(GridError):
        overlap_summary(m, AuxGrid.from_points([[0.0], [1.0]]), 50)
