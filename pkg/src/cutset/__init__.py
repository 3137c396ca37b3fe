"""Samplers for cut distributions in two-module Bayesian models.

The main entry point is :func:`run_sacut`, the stochastic approximation cut
sampler: an auxiliary SAMC chain learns the normalising functions
``p(Y | phi)`` on a grid of ``phi`` values, and its draws, aggregated over a
rounding partition of ``theta``'s box, form an importance-sampling proposal
for ``theta | Y, phi`` at any ``phi`` the main chain visits.
"""
from .errors import (
    ConfigError,
    CutsetError,
    DegenerateError,
    DomainError,
    GridError,
    ModelError,
    PartitionError,
    QuadratureError,
)
from .model import (
    BoxSupport,
    CutModel,
    log_joint_y,
    log_phi_posterior,
    make_conjugate_toy,
    make_hpv_model,
    make_random_effects_model,
    make_regression_model,
)
from .partition import PartitionSpec, approx_error_bound, cell_measure, enumerate_cells, round_kappa, simple_function_approx
from .grid import AuxGrid, coverage_ratio, max_min_select, overlap_summary, sample_phi_marginal
from .samc import SamcChain, SamcState, samc_step, update_weights, visit_frequencies, xi
from .proposal import (
    NaiveStore,
    RoundedStore,
    WeightProcess,
    density_pkappa,
    pstar_cell_probs,
    pstar_draw_naive,
    sample_pkappa,
    weight_process,
)
from .samplers import (
    ChainTrace,
    RunConfig,
    phi_accept_prob,
    run_naive_sacut,
    run_nested_mcmc,
    run_partial_gibbs,
    run_sacut,
)
from .diagnostics import (
    expected_cells_uniform,
    gelman_rubin,
    ks_distance,
    lag1_autocorr,
    mse_components,
    qq_pairs,
    simulate_cells_visited,
)
from .config import parse_config, render_config

__version__ = "0.1.0"
