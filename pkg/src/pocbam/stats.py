"""Skew-symmetric running statistics for pairwise comparison outcomes.

Each unordered pair {i, j} is stored once under its canonical orientation
(i < j); a result r recorded for (j, i) is folded in as -r. Means and
variances are maintained with Welford's one-pass update, so no sample
history is kept.
"""

from __future__ import annotations

import math

import numpy as np

# Lower bound on any pairwise standard deviation (score units). Keeps
# likelihood terms and score-posterior variances away from division by zero.
SIGMA_FLOOR = 1e-6


def num_pairs(K: int) -> int:
    """Number of unordered pairs among K alternatives."""
    return K * (K - 1) // 2


def pair_index(K: int, i: int, j: int) -> int:
    """Canonical (row-major upper-triangle) index of the pair i < j."""
    return i * K - i * (i + 1) // 2 + (j - i - 1)


def canonical_pairs(K: int) -> list[tuple[int, int]]:
    """All canonical pairs (i, j), i < j, in lexicographic order."""
    return [(i, j) for i in range(K) for j in range(i + 1, K)]


class StatsTable:
    """Running pairwise sample statistics for K alternatives."""

    def __init__(self, K: int, sigma_floor: float = SIGMA_FLOOR):
        if K < 2:
            raise ValueError(f"need at least 2 alternatives, got K={K}")
        self.K = K
        self.sigma_floor = sigma_floor
        P = num_pairs(K)
        self.n = np.zeros(P, dtype=np.int64)
        self.mean = np.zeros(P)
        self.m2 = np.zeros(P)
        iu, ju = np.triu_indices(K, 1)
        self.iu = iu
        self.ju = ju

    def _canonical(self, i: int, j: int) -> tuple[int, float]:
        """Canonical pair index and the sign relating (i, j) to it."""
        if i == j:
            raise ValueError(f"self-comparison ({i},{i}) is undefined")
        if not (0 <= i < self.K and 0 <= j < self.K):
            raise IndexError(f"pair ({i},{j}) out of range for K={self.K}")
        if i < j:
            return pair_index(self.K, i, j), 1.0
        return pair_index(self.K, j, i), -1.0

    @property
    def total_samples(self) -> int:
        return int(self.n.sum())

    def record_sample(self, i: int, j: int, r: float) -> None:
        """Fold one outcome r of comparing (i, j) into the running moments."""
        p, sign = self._canonical(i, j)
        x = sign * float(r)
        n = self.n[p] + 1
        self.n[p] = n
        delta = x - self.mean[p]
        self.mean[p] += delta / n
        self.m2[p] += delta * (x - self.mean[p])

    def pair_count(self, i: int, j: int) -> int:
        p, _ = self._canonical(i, j)
        return int(self.n[p])

    def pair_mean(self, i: int, j: int) -> float:
        """Sample mean of outcomes in the requested orientation."""
        p, sign = self._canonical(i, j)
        if self.n[p] == 0:
            raise ValueError(f"pair ({i},{j}) has no samples")
        return sign * float(self.mean[p])

    def pair_stddev(self, i: int, j: int) -> float:
        """Sample standard deviation, floored away from zero."""
        p, _ = self._canonical(i, j)
        if self.n[p] < 2:
            raise ValueError(
                f"pair ({i},{j}) has {int(self.n[p])} samples; need >= 2"
            )
        sd = math.sqrt(self.m2[p] / (self.n[p] - 1))
        return max(sd, self.sigma_floor)

    def borda_estimate(self, i: int) -> float:
        """Sum of mean outcomes of i against every other alternative."""
        if not 0 <= i < self.K:
            raise IndexError(f"alternative {i} out of range for K={self.K}")
        total = 0.0
        for j in range(self.K):
            if j != i:
                total += self.pair_mean(i, j)
        return total

    # Matrix views used by the model and allocation code.

    def count_matrix(self) -> np.ndarray:
        """K x K symmetric matrix of per-pair sample counts."""
        m = np.zeros((self.K, self.K), dtype=np.int64)
        m[self.iu, self.ju] = self.n
        m[self.ju, self.iu] = self.n
        return m

    def mean_matrix(self) -> np.ndarray:
        """K x K skew-symmetric matrix of sample means (0 where unsampled)."""
        m = np.zeros((self.K, self.K))
        m[self.iu, self.ju] = self.mean
        m[self.ju, self.iu] = -self.mean
        return m

    def stddev_pairs(self) -> np.ndarray:
        """Floored sample standard deviation per canonical pair.

        Pairs with fewer than 2 samples get the floor; callers that require
        real variance information must check counts first.
        """
        with np.errstate(invalid="ignore", divide="ignore"):
            sd = np.sqrt(self.m2 / np.maximum(self.n - 1, 1))
        sd[self.n < 2] = 0.0
        return np.maximum(sd, self.sigma_floor)
