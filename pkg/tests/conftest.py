"""Shared instance generators and brute-force oracles.

The oracles here are deliberately naive (cold refits, dense grids, direct
counts) so they stay independent of the path-tracing code they check.
"""

import numpy as np

from conflasso.lasso import Dataset, PenaltyConfig, fit, lambda_max


def make_instance(rng, n_lo=10, n_hi=50, p_lo=2, p_hi=20, rho=0.0, lam_frac=0.3):
    n = int(rng.integers(n_lo, n_hi + 1))
    p = int(rng.integers(p_lo, p_hi + 1))
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    k = max(1, p // 3)
    beta[:k] = rng.choice([-1.0, 1.0], k) * rng.uniform(0.5, 2.0, k)
    y = X @ beta + 0.5 * rng.standard_normal(n)
    data = Dataset(X, y)
    lam = lam_frac * lambda_max(data)
    return data, PenaltyConfig(lam=lam, rho=rho)


def augmented(data, x_new, y_cand):
    return Dataset(np.vstack([data.X, x_new]), np.append(data.y, y_cand))


def cold_augmented_fit(data, x_new, y_cand, penalty):
    return fit(augmented(data, x_new, y_cand), penalty)


def conformity_count(data, x_new, y_cand, penalty):
    """#{i <= n+1 : |r_i| <= |r_new|} under a cold augmented fit."""
    aug = augmented(data, x_new, y_cand)
    f = fit(aug, penalty)
    r = aug.y - aug.X @ f.beta
    return int(np.sum(np.abs(r) <= np.abs(r[-1])))


def interval_tuples(ps):
    return [(iv.lo, iv.hi) for iv in ps.intervals]


def is_subset(inner, outer, tol=1e-9):
    """Every interval of `inner` sits inside a single interval of `outer`."""
    for lo, hi in interval_tuples(inner):
        if not any(
            blo <= lo + tol and hi <= bhi + tol for blo, bhi in interval_tuples(outer)
        ):
            return False
    return True


# Deterministic instance streams shared between the property tests and the
# acceptance run, so "the same instances" means exactly that.

def refit_equivalence_instances(count=100):
    """(data, penalty, x_new) triples: n in [10,50], p in [2,20],
    lambda over 3 magnitudes, rho alternating {0, 0.5}."""
    rng = np.random.default_rng(20240817)
    fracs = (0.5, 0.05, 0.005)
    out = []
    for i in range(count):
        rho = 0.5 if i % 2 else 0.0
        data, penalty = make_instance(
            rng, n_lo=10, n_hi=50, p_lo=2, p_hi=20, rho=rho,
            lam_frac=fracs[i % 3],
        )
        x_new = rng.standard_normal(data.p)
        out.append((data, penalty, x_new))
    return out


def oracle_instances(count=100):
    """Small (n <= 30, p <= 10) instances for grid-oracle comparisons."""
    rng = np.random.default_rng(911)
    alphas = (0.05, 0.1, 0.2, 0.5)
    out = []
    for i in range(count):
        rho = 0.5 if i % 3 == 0 else 0.0
        data, penalty = make_instance(
            rng, n_lo=8, n_hi=30, p_lo=2, p_hi=10, rho=rho,
            lam_frac=0.1 + 0.3 * rng.random(),
        )
        x_new = rng.standard_normal(data.p)
        out.append((data, penalty, x_new, alphas[i % 4]))
    return out
