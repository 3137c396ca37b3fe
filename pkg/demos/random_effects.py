"""Random-effects model: the cut marginal of the first group variance.

With the variances cut from the group means, ``phi_1**2 | s_1**2`` is an
inverse-gamma distribution.  SACut recovers it even though ``theta`` (the
group means and the between-group variance) is updated only through the
auxiliary proposal.

Run with ``python3 demos/random_effects.py [n_iterations]`` (default 200000,
about a minute; the acceptance suite uses 10**6).
"""
from __future__ import annotations

import sys

import numpy as np
from scipy import stats

from cutset import RunConfig, run_sacut
from cutset.diagnostics import ks_distance
from cutset.grid import max_min_select, sample_phi_marginal
from cutset.model import make_random_effects_model, simulate_random_effects


def main(n_iterations: int = 200_000) -> None:
    sim = simulate_random_effects(seed=0)
    model = make_random_effects_model(sim["y_bar"], sim["s_sq"], sim["group_size"])
    shape = (sim["group_size"] - 1) / 2
    oracle = stats.invgamma(shape, scale=sim["s_sq"][0] / 2)

    step = 2.38 / 10 * np.sqrt(stats.invgamma(shape, scale=sim["s_sq"] / 2).var())
    grid = max_min_select(sample_phi_marginal(model, 2000, step_sd=step, seed=0), 50, seed=0)
    thin = max(1, n_iterations // 11_000)
    cfg = RunConfig(n_iterations=n_iterations, aux_prerun=10_000, kappa=2, m=50, thin=thin, seed=1)
    tr = run_sacut(model, grid, cfg)
    x = tr.phi[tr.retained(0.1, thin), 0]

    lo, med, hi = oracle.ppf([0.025, 0.5, 0.975])
    print(f"{len(x)} retained draws, phi acceptance {tr.n_phi_accepted / n_iterations:.2f}, "
          f"{tr.store_size[-1]} cells")
    print(f"phi_1^2 true {sim['phi_sq'][0]:.3f}")
    print(f"cut posterior median {np.median(x):.3f}  (analytic {med:.3f}, 95% [{lo:.3f}, {hi:.3f}])")
    print(f"KS distance to analytic marginal {ks_distance(x, oracle.cdf):.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 200_000)
