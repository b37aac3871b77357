"""Sample-acquisition policies for top-k selection by pairwise comparison.

The adaptive policies score every candidate pair by the approximate
probability of correct selection expected after one more sample (AEPCS)
and sample wherever it is largest.  The model-based variant rebuilds its
score posterior from a maximum-likelihood quality fit each step; the
standard variant uses the per-pair sample moments directly; a hybrid
switches between the two on an intransitivity gate.  Uniform round-robin
and a single-elimination tournament (with its top-k extension) serve as
baselines.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np
from scipy.special import log_ndtr, ndtr

from .model import (
    FitConfig,
    ScorePosterior,
    ThurstoneParams,
    fit_mle,
    init_params,
    intransitivity_index,
    refine_params,
    score_posterior_independent,
    score_posterior_model,
)
from .stats import StatsTable, canonical_pairs

DEFAULT_WARMUP = 3
DEFAULT_II_THRESHOLD = 0.17


def normal_cdf(z: float) -> float:
    """Standard normal CDF."""
    return float(ndtr(z))


def win_probability_analysis(n: int, gap: float, sigma: float) -> float:
    """Probability that the sum of n draws from N(gap, sigma^2) is positive.

    This is the chance a single noisy comparison repeated n times picks the
    genuinely better alternative by sign of the summed outcomes.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return normal_cdf(gap * math.sqrt(n) / sigma)


def rank_by_mean(posterior: ScorePosterior) -> np.ndarray:
    """Alternatives ordered by posterior mean, descending, ties to lower index."""
    K = posterior.mean.size
    return np.lexsort((np.arange(K), -posterior.mean))


def select_topk(posterior: ScorePosterior, k: int) -> tuple[int, ...]:
    """The k alternatives with the highest posterior means (sorted by index)."""
    if k > posterior.mean.size:
        raise ValueError(f"k={k} exceeds population size {posterior.mean.size}")
    return tuple(sorted(int(i) for i in rank_by_mean(posterior)[:k]))


def threshold_c(posterior: ScorePosterior, k: int) -> float:
    """Separating constant between the k-th and (k+1)-th ranked scores.

    c = (sd_{k+1} m_k + sd_k m_{k+1}) / (sd_k + sd_{k+1}), which always lies
    between the two adjacent ranked means.
    """
    K = posterior.mean.size
    if not 1 <= k < K:
        raise ValueError(f"need 1 <= k < K, got k={k}, K={K}")
    order = rank_by_mean(posterior)
    a, b = order[k - 1], order[k]
    sd_a = math.sqrt(posterior.var[a])
    sd_b = math.sqrt(posterior.var[b])
    return (sd_b * posterior.mean[a] + sd_a * posterior.mean[b]) / (sd_a + sd_b)


def _log_factors(posterior: ScorePosterior, selection, c: float) -> np.ndarray:
    """Per-alternative log tail probabilities of the APCS product."""
    K = posterior.mean.size
    sign = np.full(K, -1.0)
    sign[list(selection)] = 1.0
    args = sign * (posterior.mean - c) / np.sqrt(posterior.var)
    return log_ndtr(args)


def apcs(posterior: ScorePosterior, selection, c: float) -> float:
    """Approximate probability that every selected score exceeds c and every
    unselected score falls below it, under independent Gaussians."""
    return float(np.exp(_log_factors(posterior, selection, c).sum()))


def aepcs(
    posterior: ScorePosterior,
    table: StatsTable,
    selection,
    pair: tuple[int, int],
    c: float,
) -> float:
    """APCS expected after one more sample of `pair`: identical means, but the
    pair's two endpoints have the shared variance term recomputed at n+1."""
    i, j = pair
    if i == j:
        raise ValueError(f"candidate pair ({i},{i}) is degenerate")
    if posterior.pair_var is None:
        raise ValueError("posterior lacks per-pair variances")
    n = table.pair_count(i, j)
    shrink = posterior.pair_var[i, j] / (n * (n + 1))
    var = posterior.var.copy()
    var[i] -= shrink
    var[j] -= shrink
    bumped = ScorePosterior(mean=posterior.mean, var=var, pair_var=posterior.pair_var)
    return apcs(bumped, selection, c)


def best_pair_by_aepcs(
    posterior: ScorePosterior,
    table: StatsTable,
    selection,
    c: float,
) -> tuple[int, int]:
    """Argmax of AEPCS over all pairs, ties to the lexicographically smallest.

    Works in log space from the shared factor product: each candidate only
    swaps the two factors of its endpoints, so the scan is O(K^2) overall.
    """
    if posterior.pair_var is None:
        raise ValueError("posterior lacks per-pair variances")
    lf = _log_factors(posterior, selection, c)
    K = posterior.mean.size
    sign = np.full(K, -1.0)
    sign[list(selection)] = 1.0
    iu, ju = table.iu, table.ju  # canonical pair order, already lexicographic
    n = table.n
    shrink = posterior.pair_var[iu, ju] / (n * (n + 1))
    ends = np.concatenate([iu, ju])
    var_ends = posterior.var[ends] - np.concatenate([shrink, shrink])
    lf_ends = log_ndtr(sign[ends] * (posterior.mean[ends] - c) / np.sqrt(var_ends))
    P = iu.size
    scores = (lf.sum() - lf[iu] - lf[ju]) + lf_ends[:P] + lf_ends[P:]
    best = int(np.argmax(scores))
    return int(iu[best]), int(ju[best])


class Phase(Enum):
    WARMUP = "warm-up"
    ADAPTIVE = "adaptive"
    FINISHED = "finished"


class Policy:
    """Base sampling policy: owns the statistics table and the phase machine.

    next_pair and observe alternate strictly; observe folds the result into
    the table (either orientation) and advances the phase when warm-up
    completes or the budget runs out.
    """

    method = "base"

    def __init__(self, K: int, k: int, budget: int | None, n_0: int = DEFAULT_WARMUP):
        if not 1 <= k <= K:
            raise ValueError(f"need 1 <= k <= K, got k={k}, K={K}")
        self.K = K
        self.k = k
        self.budget = budget
        self.n_0 = n_0
        self.table = StatsTable(K)
        self.steps = 0
        self.last_ii: float | None = None
        self._pairs = canonical_pairs(K)
        self._warmup_total = n_0 * len(self._pairs)
        self._pending: tuple[int, int] | None = None
        self.phase = Phase.WARMUP if self._warmup_total > 0 else Phase.ADAPTIVE
        if budget is not None and budget == 0:
            self.phase = Phase.FINISHED

    def next_pair(self) -> tuple[int, int]:
        if self.phase is Phase.FINISHED:
            raise RuntimeError(f"{self.method}: budget exhausted, no further pairs")
        if self._pending is not None:
            raise RuntimeError("observe() must be called before the next pair")
        if self.phase is Phase.WARMUP:
            pair = self._pairs[self.steps % len(self._pairs)]
        else:
            pair = self._adaptive_pair()
        self._pending = pair
        return pair

    def observe(self, pair: tuple[int, int], result: float) -> None:
        if self._pending is None:
            raise RuntimeError("no outstanding pair; call next_pair() first")
        i, j = pair
        if (i, j) == self._pending:
            oriented = float(result)
        elif (j, i) == self._pending:
            oriented = -float(result)
        else:
            raise ValueError(f"observed pair {pair} does not match issued {self._pending}")
        a, b = self._pending
        self.table.record_sample(a, b, oriented)
        self._pending = None
        self.steps += 1
        self._after_observe(oriented)
        if self.budget is not None and self.steps >= self.budget:
            self.phase = Phase.FINISHED
        elif self.phase is Phase.WARMUP and self.steps >= self._warmup_total:
            self.phase = Phase.ADAPTIVE

    def current_selection(self, k: int | None = None) -> tuple[int, ...]:
        """Indices of the k alternatives ranked best right now."""
        means = self._selection_means()
        kk = self.k if k is None else k
        if not 1 <= kk <= self.K:
            raise ValueError(f"need 1 <= k <= K, got k={kk}, K={self.K}")
        order = np.lexsort((np.arange(self.K), -means))
        return tuple(sorted(int(i) for i in order[:kk]))

    # hooks ------------------------------------------------------------
    def _adaptive_pair(self) -> tuple[int, int]:
        raise NotImplementedError

    def _after_observe(self, result: float) -> None:
        pass

    def _selection_means(self) -> np.ndarray:
        raise NotImplementedError


class UniformPolicy(Policy):
    """Round-robin over all pairs, forever."""

    method = "uniform"

    def _adaptive_pair(self) -> tuple[int, int]:
        return self._pairs[self.steps % len(self._pairs)]

    def _selection_means(self) -> np.ndarray:
        return np.array([self.table.borda_estimate(i) for i in range(self.K)])


class PocbamPolicy(Policy):
    """AEPCS-greedy allocation on the independent (sample-moment) posterior."""

    method = "pocbam"

    def _posterior(self) -> ScorePosterior:
        return score_posterior_independent(self.table)

    def _adaptive_pair(self) -> tuple[int, int]:
        posterior = self._posterior()
        selection = select_topk(posterior, self.k)
        c = threshold_c(posterior, self.k)
        return best_pair_by_aepcs(posterior, self.table, selection, c)

    def _selection_means(self) -> np.ndarray:
        return np.array([self.table.borda_estimate(i) for i in range(self.K)])


class MlPocbamPolicy(Policy):
    """AEPCS-greedy allocation on the maximum-likelihood model posterior.

    The quality fit is refreshed every `refit_every` adaptive steps (warm
    started from the previous solution); posterior variances are rebuilt
    from the current counts every step regardless.
    """

    method = "ml-pocbam"

    def __init__(
        self,
        K: int,
        k: int,
        budget: int | None,
        n_0: int = DEFAULT_WARMUP,
        refit_every: int = 1,
        fit_config: FitConfig | None = None,
    ):
        super().__init__(K, k, budget, n_0)
        if refit_every < 1:
            raise ValueError(f"refit_every must be >= 1, got {refit_every}")
        self.refit_every = refit_every
        self.fit_config = fit_config
        self._params: ThurstoneParams | None = None
        self._steps_since_fit = 0

    def _refit(self, init: ThurstoneParams) -> ThurstoneParams:
        # polishing the starting point first leaves the optimizer (which
        # still enforces its own tolerance) little or nothing to do
        init = refine_params(self.table, init, self.fit_config)
        params, _ = fit_mle(self.table, init, self.fit_config)
        return params

    def _fitted_params(self, refresh: bool) -> ThurstoneParams:
        if self._params is None:
            self._params = self._refit(init_params(self.table))
            self._steps_since_fit = 0
        elif refresh and self._steps_since_fit >= self.refit_every:
            self._params = self._refit(self._params)
            self._steps_since_fit = 0
        return self._params

    def _after_observe(self, result: float) -> None:
        self._steps_since_fit += 1

    def _posterior(self) -> ScorePosterior:
        return score_posterior_model(self._fitted_params(refresh=True), self.table)

    def _adaptive_pair(self) -> tuple[int, int]:
        posterior = self._posterior()
        selection = select_topk(posterior, self.k)
        c = threshold_c(posterior, self.k)
        return best_pair_by_aepcs(posterior, self.table, selection, c)

    def _selection_means(self) -> np.ndarray:
        # fresh warm-started fit on the current table; cache untouched so a
        # mid-run query never changes the pair sequence
        if int(self.table.n.min()) < 2:
            # mid warm-up the model is not fittable yet; rank by the same
            # empirical scores every other method would report here
            return np.array([self.table.borda_estimate(i) for i in range(self.K)])
        init = self._params.copy() if self._params is not None else init_params(self.table)
        params = self._refit(init)
        return score_posterior_model(params, self.table).mean

    def current_ii(self) -> float:
        """Intransitivity index of the data in hand, without touching the
        cached fit (so querying it never changes the pair sequence)."""
        init = self._params.copy() if self._params is not None else init_params(self.table)
        params = self._refit(init)
        model_post = score_posterior_model(params, self.table)
        indep_post = score_posterior_independent(self.table)
        return intransitivity_index(indep_post, model_post)


class HybridPolicy(MlPocbamPolicy):
    """Model-based allocation gated by the intransitivity index.

    Each refit recomputes II between the sample-moment and model posteriors;
    while II stays at or below the threshold the model posterior drives both
    sampling and selection, otherwise the policy falls back to the
    sample-moment machinery.
    """

    method = "hybrid"

    def __init__(
        self,
        K: int,
        k: int,
        budget: int | None,
        n_0: int = DEFAULT_WARMUP,
        refit_every: int = 1,
        ii_threshold: float = DEFAULT_II_THRESHOLD,
        fit_config: FitConfig | None = None,
    ):
        super().__init__(K, k, budget, n_0, refit_every, fit_config)
        self.ii_threshold = ii_threshold

    def _adaptive_pair(self) -> tuple[int, int]:
        refresh = self._params is None or self._steps_since_fit >= self.refit_every
        params = self._fitted_params(refresh=True)
        model_post = score_posterior_model(params, self.table)
        indep_post = score_posterior_independent(self.table)
        if refresh or self.last_ii is None:
            self.last_ii = intransitivity_index(indep_post, model_post)
        posterior = model_post if self.last_ii <= self.ii_threshold else indep_post
        selection = select_topk(posterior, self.k)
        c = threshold_c(posterior, self.k)
        return best_pair_by_aepcs(posterior, self.table, selection, c)

    def _selection_means(self) -> np.ndarray:
        if self.last_ii is not None and self.last_ii > self.ii_threshold:
            return np.array([self.table.borda_estimate(i) for i in range(self.K)])
        return super()._selection_means()


def _match(a: int, b: int, nu: int, rng: np.random.Generator):
    """Generator: duel a against b over nu samples; returns the winner by the
    sign of the summed outcomes, an exact zero resolved by fair coin."""
    total = 0.0
    for _ in range(nu):
        total += yield (a, b)
    if total > 0:
        return a
    if total < 0:
        return b
    return a if rng.random() < 0.5 else b


def select_schedule(alternatives, nu: int, rng: np.random.Generator):
    """Generator running a single-elimination bracket over `alternatives`.

    Yields the pair to sample, receives each result via send(); its return
    value is the champion's index.  Odd rounds give the last seed a bye.
    """
    players = list(alternatives)
    if not players:
        raise ValueError("tournament needs at least one alternative")
    while len(players) > 1:
        survivors = []
        for t in range(0, len(players) - 1, 2):
            winner = yield from _match(players[t], players[t + 1], nu, rng)
            survivors.append(winner)
        if len(players) % 2 == 1:
            survivors.append(players[-1])
        players = survivors
    return players[0]


def _shortlist_insert(shortlist, entry, nu: int, rng: np.random.Generator):
    """Generator: binary-insert (index, home sub-population) into the
    best-first shortlist using nu-sample duels as the comparator."""
    lo, hi = 0, len(shortlist)
    while lo < hi:
        mid = (lo + hi) // 2
        winner = yield from _match(entry[0], shortlist[mid][0], nu, rng)
        if winner == entry[0]:
            hi = mid
        else:
            lo = mid + 1
    shortlist.insert(lo, entry)


def top_schedule(K: int, k: int, nu: int, rng: np.random.Generator):
    """Generator running the top-k tournament; returns the selected index set.

    Partitions the population into k near-equal contiguous sub-populations,
    crowns each one's champion, then repeatedly emits the best-ranked
    champion and re-runs the bracket on the emitted champion's remaining
    sub-population members.
    """
    if k > K:
        raise ValueError(f"k={k} exceeds population size {K}")
    if k == K:
        return tuple(range(K))
    subpops = [list(part) for part in np.array_split(np.arange(K), k)]
    shortlist: list[tuple[int, list[int]]] = []
    for sp in subpops:
        champion = yield from select_schedule(sp, nu, rng)
        yield from _shortlist_insert(shortlist, (champion, sp), nu, rng)
    selected: list[int] = []
    while len(selected) < k:
        champion, home = shortlist.pop(0)
        selected.append(champion)
        if len(selected) == k:
            break
        remaining = [x for x in home if x not in selected]
        if remaining:
            runner_up = yield from select_schedule(remaining, nu, rng)
            yield from _shortlist_insert(shortlist, (runner_up, remaining), nu, rng)
    return tuple(sorted(selected))


def _drive(env, schedule):
    """Run a tournament generator against an environment, counting samples."""
    samples = 0
    try:
        pair = schedule.send(None)
        while True:
            samples += 1
            pair = schedule.send(env.sample(*pair))
    except StopIteration as stop:
        return stop.value, samples


def select_tournament(env, alternatives, nu: int, rng=None) -> int:
    """Champion of a single-elimination bracket over `alternatives`."""
    if nu < 1:
        raise ValueError(f"nu must be >= 1, got {nu}")
    coin = rng if rng is not None else env.rng
    winner, _ = _drive(env, select_schedule(alternatives, nu, coin))
    return winner


def top_select(env, K: int, k: int, nu: int, rng=None) -> tuple[int, ...]:
    """Top-k subset chosen by the sub-population tournament."""
    if nu < 1:
        raise ValueError(f"nu must be >= 1, got {nu}")
    coin = rng if rng is not None else env.rng
    chosen, _ = _drive(env, top_schedule(K, k, nu, coin))
    return chosen


class SelectTopPolicy(Policy):
    """Tournament baseline: the pair sequence is dictated by the bracket.

    There is no warm-up and no fixed budget; the policy finishes when the
    tournament completes, after a data-dependent number of samples.
    """

    method = "select-top"

    def __init__(self, K: int, k: int, nu: int, rng: np.random.Generator):
        super().__init__(K, k, budget=None, n_0=0)
        if nu < 1:
            raise ValueError(f"nu must be >= 1, got {nu}")
        self.nu = nu
        self._result: tuple[int, ...] | None = None
        self._schedule = top_schedule(K, k, nu, rng)
        self._advance(None)

    def _advance(self, result: float | None) -> None:
        try:
            self._next = self._schedule.send(result)
        except StopIteration as stop:
            self._result = stop.value
            self._next = None
            self.phase = Phase.FINISHED

    def _adaptive_pair(self) -> tuple[int, int]:
        return self._next

    def _after_observe(self, result: float) -> None:
        self._advance(result)

    @property
    def finished(self) -> bool:
        return self._result is not None

    def current_selection(self, k: int | None = None) -> tuple[int, ...]:
        if k is not None and k != self.k:
            raise ValueError(f"tournament was built for k={self.k}, not k={k}")
        if self._result is None:
            raise RuntimeError("tournament not complete yet")
        return self._result


def make_policy(
    method: str,
    K: int,
    k: int,
    budget: int | None = None,
    *,
    n_0: int = DEFAULT_WARMUP,
    refit_every: int = 1,
    ii_threshold: float = DEFAULT_II_THRESHOLD,
    nu: int = 1,
    rng: np.random.Generator | None = None,
    fit_config: FitConfig | None = None,
) -> Policy:
    """Construct a policy by method tag."""
    if method == "uniform":
        return UniformPolicy(K, k, budget, n_0)
    if method == "pocbam":
        return PocbamPolicy(K, k, budget, n_0)
    if method == "ml-pocbam":
        return MlPocbamPolicy(K, k, budget, n_0, refit_every, fit_config)
    if method == "hybrid":
        return HybridPolicy(K, k, budget, n_0, refit_every, ii_threshold, fit_config)
    if method == "select-top":
        if rng is None:
            raise ValueError("select-top needs an RNG for tie coins")
        return SelectTopPolicy(K, k, nu, rng)
    raise ValueError(f"unknown method {method!r}")
