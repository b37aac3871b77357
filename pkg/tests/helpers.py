"""Shared test utilities: table builders and independent oracles."""

import math

import numpy as np

from pocbam.model import ThurstoneParams, log_likelihood
from pocbam.stats import StatsTable, canonical_pairs


def make_table(K, samples, sigma_floor=None):
    """Build a StatsTable from an explicit (i, j, r) sample list."""
    table = StatsTable(K) if sigma_floor is None else StatsTable(K, sigma_floor)
    for i, j, r in samples:
        table.record_sample(i, j, r)
    return table


def random_samples(rng, K, min_per_pair=2, extra=30):
    """Random sample list covering every pair at least min_per_pair times."""
    samples = []
    for i, j in canonical_pairs(K):
        for _ in range(min_per_pair):
            samples.append((i, j, float(rng.normal(0, 2))))
    for _ in range(extra):
        i, j = rng.choice(K, size=2, replace=False)
        samples.append((int(i), int(j), float(rng.normal(0, 2))))
    return samples


def random_params(rng, K):
    gamma = np.concatenate([[0.0], rng.normal(0, 1, K - 1)])
    sigma = rng.uniform(0.5, 2.0, K * (K - 1) // 2)
    return ThurstoneParams(gamma=gamma, sigma=sigma)


def brute_force_ll(samples, params):
    """Log-likelihood summed sample by sample from a retained history."""
    sm = params.sigma_matrix()
    ll = 0.0
    for i, j, r in samples:
        delta = params.gamma[i] - params.gamma[j]
        s = sm[i, j]
        ll += -0.5 * math.log(2 * math.pi) - math.log(s) - 0.5 * ((r - delta) / s) ** 2
    return ll


def fd_gradients(params, table, step=1e-5):
    """Central finite differences of the log-likelihood over free params."""
    K = params.K
    d_gamma = np.zeros(K - 1)
    for k in range(1, K):
        up = ThurstoneParams(params.gamma.copy(), params.sigma.copy())
        dn = ThurstoneParams(params.gamma.copy(), params.sigma.copy())
        up.gamma[k] += step
        dn.gamma[k] -= step
        d_gamma[k - 1] = (log_likelihood(up, table) - log_likelihood(dn, table)) / (2 * step)
    d_sigma = np.zeros(len(params.sigma))
    for p in range(len(params.sigma)):
        up = ThurstoneParams(params.gamma.copy(), params.sigma.copy())
        dn = ThurstoneParams(params.gamma.copy(), params.sigma.copy())
        up.sigma[p] += step
        dn.sigma[p] -= step
        d_sigma[p] = (log_likelihood(up, table) - log_likelihood(dn, table)) / (2 * step)
    return d_gamma, d_sigma


def sample_from_model(rng, gamma, sigma_pairs, n_per_pair):
    """Draw n_per_pair outcomes for every canonical pair of a true model."""
    K = len(gamma)
    samples = []
    for idx, (i, j) in enumerate(canonical_pairs(K)):
        mu = gamma[i] - gamma[j]
        for r in rng.normal(mu, sigma_pairs[idx], size=n_per_pair):
            samples.append((i, j, float(r)))
    return samples
