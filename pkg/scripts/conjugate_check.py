"""Compare MH, HMC and NUTS draws with closed-form conjugate posteriors.

    python3 scripts/conjugate_check.py --draws 50000
"""

import argparse
import time

import numpy as np

from bnnkit.conjugate import (
    beta_bernoulli_model,
    beta_bernoulli_posterior,
    dirichlet_categorical_model,
    dirichlet_categorical_posterior,
    gamma_poisson_model,
    gamma_poisson_posterior,
)
from bnnkit.diagnostics import chain_stats
from bnnkit.mcmc import HmcConfig, MhConfig, NutsConfig, hmc, metropolis_hastings, nuts

# (model, oracle, rough posterior scale in unconstrained space for MH proposals)
CASES = {
    "beta-bernoulli(1,1; 7H,3T)": (beta_bernoulli_model(1, 1, 7, 3), beta_bernoulli_posterior(1, 1, 7, 3), 0.6),
    "gamma-poisson(2,1; 120 in 50)": (gamma_poisson_model(2, 1, 120, 50), gamma_poisson_posterior(2, 1, 120, 50), 0.09),
    "dirichlet(1,1,1; 2,3,5)": (
        dirichlet_categorical_model([1, 1, 1], [2, 3, 5]),
        dirichlet_categorical_posterior([1, 1, 1], [2, 3, 5]),
        0.5,
    ),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    samplers = {
        "mh": lambda m, s: metropolis_hastings(m, MhConfig(2.4 * s, args.draws, 1000, seed=args.seed)),
        "hmc": lambda m, s: hmc(m, HmcConfig(0.5, 3, args.draws, 1000, seed=args.seed, target_accept=0.8)),
        "nuts": lambda m, s: nuts(m, NutsConfig(n_samples=args.draws, n_warmup=1000, seed=args.seed)),
    }
    print(f"{'case':32} {'sampler':7} {'mean err':>9} {'var rel':>8} {'min ess':>8} {'sec':>6}")
    for name, (model, oracle, scale) in CASES.items():
        mean, var = np.atleast_1d(oracle.mean()), np.atleast_1d(oracle.variance())
        for sname, run in samplers.items():
            t0 = time.perf_counter()
            s = run(model, scale)
            sec = time.perf_counter() - t0
            x = s.constrained_draws
            if x.shape[1] < len(mean):
                x = np.column_stack([x, 1 - x.sum(axis=1)])
            err = np.max(np.abs(x.mean(axis=0) - mean))
            rel = np.max(np.abs(x.var(axis=0) / var - 1))
            ess = chain_stats(s)["effective_sample_size"].min()
            print(f"{name:32} {sname:7} {err:9.5f} {rel:8.4f} {ess:8.0f} {sec:6.1f}")


if __name__ == "__main__":
    main()
