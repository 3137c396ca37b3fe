"""Conjugate toy: compare SACut with the analytic cut marginal.

The cut marginal of theta is N(0, 1 + tau**2).  The script runs SACut at two
precisions and the partial Gibbs oracle, then prints the KS distance of each
to the analytic marginal and the size of the rounded store.

Run with ``python3 demos/toy_cut_marginal.py`` (about a minute).
"""
from __future__ import annotations

import math

from scipy import stats

from cutset import RunConfig, make_conjugate_toy, run_partial_gibbs, run_sacut
from cutset.diagnostics import ks_distance
from cutset.grid import max_min_select, sample_phi_marginal


def main() -> None:
    tau = 1.0
    model = make_conjugate_toy(1.0, 0.0, tau)
    oracle = stats.norm(0.0, math.sqrt(1.0 + tau**2))
    grid = max_min_select(sample_phi_marginal(model, 2000, seed=0), 50, seed=0)
    print(f"grid: {grid.m} points, phi range [{grid.points.min():.2f}, {grid.points.max():.2f}]")

    for kappa in (1, 3):
        cfg = RunConfig(n_iterations=50_000, aux_prerun=5000, kappa=kappa, thin=1, seed=1)
        tr = run_sacut(model, grid, cfg)
        x = tr.theta[tr.retained(0.1, 1), 0]
        print(f"SACut kappa={kappa}: mean {x.mean():+.3f} sd {x.std():.3f} "
              f"KS {ks_distance(x, oracle.cdf):.3f} cells {tr.store_size[-1]} "
              f"({tr.timings['main']:.1f}s)")

    tr = run_partial_gibbs(model, RunConfig(n_iterations=50_000, aux_prerun=0, thin=1, seed=1))
    x = tr.theta[tr.retained(0.1, 1), 0]
    print(f"partial Gibbs: mean {x.mean():+.3f} sd {x.std():.3f} KS {ks_distance(x, oracle.cdf):.3f}")
    print(f"analytic: mean +0.000 sd {oracle.std():.3f}")


if __name__ == "__main__":
    main()
