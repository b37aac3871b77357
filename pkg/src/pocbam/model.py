"""Thurstonian latent-quality model over pairwise score outcomes.

Each alternative i carries a quality gamma_i; a comparison of (i, j) is
modelled as N(gamma_i - gamma_j, sigma_ij^2). The log-likelihood of the
collected samples depends on the data only through the per-pair count,
mean and squared-deviation sum, so fitting is O(K^2) regardless of how
many samples were taken:

    sum_t (r_t - delta)^2 = m2 + n * (mean - delta)^2,  delta = gamma_i - gamma_j

gamma_0 is pinned to 0; the likelihood depends only on quality differences
and would otherwise have a flat direction. Pair deviations are optimized
as log(sigma) so positivity needs no constraint handling beyond a floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stats import SIGMA_FLOOR, StatsTable

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ThurstoneParams:
    """Quality vector (gauge gamma[0] == 0) and canonical-pair deviations."""

    gamma: np.ndarray  # (K,)
    sigma: np.ndarray  # (P,) one entry per canonical pair, all >= floor

    @property
    def K(self) -> int:
        return len(self.gamma)

    def sigma_matrix(self) -> np.ndarray:
        K = self.K
        iu, ju = np.triu_indices(K, 1)
        m = np.zeros((K, K))
        m[iu, ju] = self.sigma
        m[ju, iu] = self.sigma
        return m

    def copy(self) -> "ThurstoneParams":
        return ThurstoneParams(self.gamma.copy(), self.sigma.copy())


@dataclass
class ScorePosterior:
    """Per-alternative Gaussian over the Borda score.

    pair_var keeps the K x K per-pair variances the posterior was built
    from, which the allocation scan needs to predict post-sample variances.
    """

    mean: np.ndarray  # (K,)
    var: np.ndarray   # (K,)
    pair_var: np.ndarray | None = None


@dataclass
class FitReport:
    converged: bool
    iterations: int
    final_gradient_norm: float
    log_likelihood: float


@dataclass
class FitConfig:
    grad_tol: float = 1e-6     # infinity norm of the projected gradient
    max_iter: int = 500
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4        # sufficient-increase slope fraction
    sigma_floor: float = SIGMA_FLOOR
    memory: int = 30           # quasi-Newton curvature pairs retained


class FitError(RuntimeError):
    """Non-finite likelihood during fitting; carries the offending params."""

    def __init__(self, message: str, params: ThurstoneParams):
        super().__init__(message)
        self.params = params


def _require_counts(table: StatsTable, min_n: int, what: str) -> None:
    short = np.flatnonzero(table.n < min_n)
    if short.size:
        p = int(short[0])
        i, j = int(table.iu[p]), int(table.ju[p])
        raise ValueError(
            f"{what} requires >= {min_n} samples per pair; "
            f"pair ({i},{j}) has {int(table.n[p])}"
        )


def init_params(table: StatsTable, sigma_floor: float = SIGMA_FLOOR) -> ThurstoneParams:
    """Initial estimates: centered Borda scores over K, sample deviations."""
    _require_counts(table, 2, "init_params")
    borda = table.mean_matrix().sum(axis=1)
    gamma = (borda - borda[0]) / table.K
    return ThurstoneParams(gamma=gamma, sigma=np.maximum(table.stddev_pairs(), sigma_floor))


def _pair_quadratic(params: ThurstoneParams, table: StatsTable) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair residual n*(mean-delta) pieces: (residual mean-delta, A)."""
    delta = params.gamma[table.iu] - params.gamma[table.ju]
    resid = table.mean - delta
    a = table.m2 + table.n * resid * resid
    return resid, a


def log_likelihood(params: ThurstoneParams, table: StatsTable) -> float:
    """Gaussian log-likelihood of all recorded samples under the model."""
    if np.any(params.sigma <= 0):
        raise ValueError("all pair deviations must be positive")
    _, a = _pair_quadratic(params, table)
    t = table.n.sum()
    return float(
        -0.5 * t * LOG_2PI
        - np.dot(table.n, np.log(params.sigma))
        - 0.5 * np.sum(a / (params.sigma * params.sigma))
    )


def _ll_and_gradients(params: ThurstoneParams, table: StatsTable) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-likelihood with full gradients: (ll, d/dgamma (K,), d/dsigma (P,))."""
    K = table.K
    s2 = params.sigma * params.sigma
    resid, a = _pair_quadratic(params, table)
    t = table.n.sum()
    ll = float(-0.5 * t * LOG_2PI - np.dot(table.n, np.log(params.sigma)) - 0.5 * np.sum(a / s2))
    g_pair = table.n * resid / s2
    d_gamma = np.bincount(table.iu, weights=g_pair, minlength=K) - np.bincount(
        table.ju, weights=g_pair, minlength=K
    )
    d_sigma = -table.n / params.sigma + a / (s2 * params.sigma)
    return ll, d_gamma, d_sigma


def ll_gradient(params: ThurstoneParams, table: StatsTable) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients over the free parameters gamma_1..gamma_{K-1} and sigma."""
    _, d_gamma, d_sigma = _ll_and_gradients(params, table)
    return d_gamma[1:], d_sigma


class _Objective:
    """Fused negative-log-likelihood value/gradient/curvature-diagonal.

    Free vector x = [gamma_1..gamma_{K-1}, log sigma_0..log sigma_{P-1}].
    """

    def __init__(self, table: StatsTable):
        self.K = table.K
        self.iu = table.iu
        self.ju = table.ju
        self.n = table.n.astype(float)
        self.mean = table.mean.copy()
        self.m2 = table.m2.copy()
        self.t = float(self.n.sum())

    def pack(self, params: ThurstoneParams) -> np.ndarray:
        return np.concatenate([params.gamma[1:], np.log(params.sigma)])

    def unpack(self, x: np.ndarray, sigma_floor: float) -> ThurstoneParams:
        ng = self.K - 1
        gamma = np.zeros(self.K)
        gamma[1:] = x[:ng]
        sigma = np.maximum(np.exp(x[ng:]), sigma_floor)
        return ThurstoneParams(gamma=gamma, sigma=sigma)

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        ng = self.K - 1
        u = x[ng:]
        # Extreme u can overflow exp() at line-search trial points; the
        # resulting non-finite f is rejected by the caller.
        with np.errstate(over="ignore"):
            sigma2 = np.exp(2.0 * u)
        gamma = np.concatenate([[0.0], x[:ng]])
        delta = gamma[self.iu] - gamma[self.ju]
        resid = self.mean - delta
        a = self.m2 + self.n * resid * resid
        a_s2 = a / sigma2
        f = 0.5 * self.t * LOG_2PI + float(np.dot(self.n, u)) + 0.5 * float(a_s2.sum())
        w = self.n / sigma2
        g_pair = w * resid
        d_gamma = np.bincount(self.iu, weights=g_pair, minlength=self.K) - np.bincount(
            self.ju, weights=g_pair, minlength=self.K
        )
        grad = np.concatenate([-d_gamma[1:], self.n - a_s2])
        h_gamma = np.bincount(self.iu, weights=w, minlength=self.K) + np.bincount(
            self.ju, weights=w, minlength=self.K
        )
        hdiag = np.concatenate([h_gamma[1:], 2.0 * a_s2])
        return f, grad, hdiag


def _two_loop(grad: np.ndarray, history: list[tuple[np.ndarray, np.ndarray, float]], h0: np.ndarray) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    q *= h0
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


def fit_mle(
    table: StatsTable,
    init: ThurstoneParams,
    config: FitConfig | None = None,
) -> tuple[ThurstoneParams, FitReport]:
    """Maximize the model log-likelihood from `init` by quasi-Newton ascent.

    Limited-memory BFGS on the negative log-likelihood with a backtracking
    line search (sufficient-increase condition) and the analytic curvature
    diagonal as preconditioner. log(sigma) entries are kept above
    log(sigma_floor) by projection.
    """
    cfg = config or FitConfig()
    obj = _Objective(table)
    ng = table.K - 1
    lo = math.log(cfg.sigma_floor)

    def clamp(x: np.ndarray) -> np.ndarray:
        out = x.copy()
        np.maximum(out[ng:], lo, out=out[ng:])
        return out

    def projected(x: np.ndarray, g: np.ndarray) -> np.ndarray:
        pg = g.copy()
        at_lo = np.flatnonzero(x[ng:] <= lo + 1e-15)
        blocked = at_lo[g[ng + at_lo] > 0]
        pg[ng + blocked] = 0.0
        return pg

    x = clamp(obj.pack(init))
    f, g, hdiag = obj(x)
    if not np.isfinite(f):
        raise FitError("non-finite log-likelihood at initial parameters", obj.unpack(x, cfg.sigma_floor))

    history: list[tuple[np.ndarray, np.ndarray, float]] = []
    iterations = 0
    converged = False
    stalls = 0
    while True:
        pg = projected(x, g)
        gnorm = float(np.max(np.abs(pg))) if pg.size else 0.0
        if gnorm <= cfg.grad_tol:
            converged = True
            break
        if iterations >= cfg.max_iter:
            break
        h0 = 1.0 / np.maximum(hdiag, 1e-8)
        d = -_two_loop(pg, history, h0)
        slope = float(np.dot(g, d))
        if not np.isfinite(slope) or slope >= 0.0:
            history.clear()
            d = -pg * h0
            slope = float(np.dot(g, d))
        alpha = 1.0
        accepted = False
        for _ in range(60):
            xt = clamp(x + alpha * d)
            step = xt - x
            ft, gt, ht = obj(xt)
            if np.isfinite(ft) and ft <= f + cfg.ls_c1 * float(np.dot(g, step)):
                accepted = True
                break
            alpha *= cfg.ls_shrink
        if not accepted:
            break
        if ft >= f:
            # The accepted step did not lower the objective.  When |f| is
            # large its float grid is coarse, so flat steps still happen
            # while the gradient (computed from sufficient statistics, not
            # by differencing f) keeps shrinking.  Only repeated flat steps
            # with no real gradient reduction mean the iterate sits at the
            # floating-point floor and further iterations cannot help.
            gt_norm = float(np.max(np.abs(projected(xt, gt)))) if gt.size else 0.0
            if gt_norm <= 0.9 * gnorm:
                stalls = 0
            else:
                stalls += 1
                if stalls >= 3:
                    break
        else:
            stalls = 0
        s = xt - x
        y = gt - g
        sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            history.append((s, y, 1.0 / sy))
            if len(history) > cfg.memory:
                history.pop(0)
        x, f, g, hdiag = xt, ft, gt, ht
        iterations += 1

    params = obj.unpack(x, cfg.sigma_floor)
    pg = projected(x, g)
    report = FitReport(
        converged=converged,
        iterations=iterations,
        final_gradient_norm=float(np.max(np.abs(pg))) if pg.size else 0.0,
        log_likelihood=-f,
    )
    return params, report


def _laplacian_solve(table: StatsTable, weights: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the gauge-reduced weighted-graph normal equations L x = rhs.

    L is the graph Laplacian of the canonical pairs under `weights`; row and
    column 0 are dropped (gamma_0 is pinned), so the returned vector has a
    leading zero.
    """
    K = table.K
    L = np.zeros((K, K))
    L[table.iu, table.ju] = -weights
    L[table.ju, table.iu] = -weights
    diag = np.bincount(table.iu, weights=weights, minlength=K) + np.bincount(
        table.ju, weights=weights, minlength=K
    )
    L[np.arange(K), np.arange(K)] = diag
    out = np.zeros(K)
    out[1:] = np.linalg.solve(L[1:, 1:], rhs[1:])
    return out


def refine_params(
    table: StatsTable,
    init: ThurstoneParams,
    config: FitConfig | None = None,
    max_rounds: int = 40,
) -> ThurstoneParams:
    """Polish an initial guess to (near) the likelihood optimum cheaply.

    The likelihood has exact block maximizers — sigma given gamma in closed
    form, gamma given sigma through the weighted-Laplacian normal
    equations — and its log-sigma Hessian block is diagonal, so a full
    Newton step reduces to one (K-1)-dimensional solve.  Rounds of Newton
    with an exact-sweep fallback converge far faster than quasi-Newton
    iterations on this stiff objective.  fit_mle stays the arbiter of
    convergence: this routine only builds its starting point, stopping at
    the same gradient tolerance or when progress hits the float floor.
    """
    cfg = config or FitConfig()
    obj = _Objective(table)
    ng = table.K - 1
    lo = math.log(cfg.sigma_floor)
    iu, ju = table.iu, table.ju
    n, mean, m2 = obj.n, obj.mean, obj.m2

    def clamp(x: np.ndarray) -> np.ndarray:
        out = x.copy()
        np.maximum(out[ng:], lo, out=out[ng:])
        return out

    def projected_norm(x: np.ndarray, g: np.ndarray) -> float:
        if not g.size:
            return 0.0
        pg = g.copy()
        at_lo = np.flatnonzero(x[ng:] <= lo + 1e-15)
        blocked = at_lo[g[ng + at_lo] > 0]
        pg[ng + blocked] = 0.0
        return float(np.max(np.abs(pg)))

    def sweep(x: np.ndarray) -> np.ndarray:
        """sigma | gamma closed form, then gamma | sigma, then sigma again.

        Each half-step maximizes the likelihood over its block, so the
        objective never decreases."""
        gamma = np.concatenate([[0.0], x[:ng]])
        resid = mean - (gamma[iu] - gamma[ju])
        s2 = np.maximum((m2 + n * resid * resid) / n, cfg.sigma_floor ** 2)
        w = n / s2
        gamma = _laplacian_solve(
            table,
            w,
            np.bincount(iu, weights=w * mean, minlength=table.K)
            - np.bincount(ju, weights=w * mean, minlength=table.K),
        )
        resid = mean - (gamma[iu] - gamma[ju])
        s2 = np.maximum((m2 + n * resid * resid) / n, cfg.sigma_floor ** 2)
        return clamp(np.concatenate([gamma[1:], 0.5 * np.log(s2)]))

    x = clamp(obj.pack(init))
    f, g, _ = obj(x)
    if not np.isfinite(f):
        x = sweep(x)
        f, g, _ = obj(x)
    stalls = 0
    for _ in range(max_rounds):
        if projected_norm(x, g) <= cfg.grad_tol:
            break
        xt = None
        gamma = np.concatenate([[0.0], x[:ng]])
        s2 = np.exp(2.0 * x[ng:])
        resid = mean - (gamma[iu] - gamma[ju])
        a = m2 + n * resid * resid
        w = n / s2
        d_uu = np.maximum(2.0 * a / s2, 1e-12)        # diagonal log-sigma block
        cross = 2.0 * w * resid                       # gamma/log-sigma coupling
        gu = g[ng:]
        try:
            # Schur complement onto the gamma block: effective pair weights
            # w - cross^2 / d_uu can go negative, making the system
            # indefinite; the solve then fails or yields a non-ascent
            # direction and the exact sweep takes over.
            coupling = cross / d_uu
            d_gamma_full = _laplacian_solve(
                table,
                w - cross * coupling,
                -np.concatenate([[0.0], g[:ng]])
                + np.bincount(iu, weights=coupling * gu, minlength=table.K)
                - np.bincount(ju, weights=coupling * gu, minlength=table.K),
            )
            du = -(gu + cross * (d_gamma_full[iu] - d_gamma_full[ju])) / d_uu
            d = np.concatenate([d_gamma_full[1:], du])
            slope = float(np.dot(g, d))
            if np.isfinite(slope) and slope < 0.0:
                alpha = 1.0
                for _ in range(30):
                    cand = clamp(x + alpha * d)
                    fc, gc, _ = obj(cand)
                    if np.isfinite(fc) and fc <= f + cfg.ls_c1 * alpha * slope:
                        xt = cand
                        break
                    alpha *= cfg.ls_shrink
        except np.linalg.LinAlgError:
            pass
        if xt is None:
            xt = sweep(x)
            fc, gc, _ = obj(xt)
            if not np.isfinite(fc):
                break
        stalls = stalls + 1 if fc >= f else 0
        if fc <= f:
            x, f, g = xt, fc, gc
        if stalls >= 2:
            break
    return obj.unpack(x, cfg.sigma_floor)


def score_posterior_model(params: ThurstoneParams, table: StatsTable) -> ScorePosterior:
    """Score posterior from fitted params: sums of quality gaps, variance
    sums sigma_ij^2 / n_ij."""
    _require_counts(table, 1, "score_posterior_model")
    K = table.K
    mean = K * params.gamma - params.gamma.sum()
    s2 = params.sigma * params.sigma
    contrib = s2 / table.n
    var = np.bincount(table.iu, weights=contrib, minlength=K) + np.bincount(
        table.ju, weights=contrib, minlength=K
    )
    pair_var = np.zeros((K, K))
    pair_var[table.iu, table.ju] = s2
    pair_var[table.ju, table.iu] = s2
    return ScorePosterior(mean=mean, var=var, pair_var=pair_var)


def score_posterior_independent(table: StatsTable) -> ScorePosterior:
    """Score posterior treating every pair's sample mean as independent."""
    _require_counts(table, 2, "score_posterior_independent")
    K = table.K
    mean = table.mean_matrix().sum(axis=1)
    sd = table.stddev_pairs()
    s2 = sd * sd
    contrib = s2 / table.n
    var = np.bincount(table.iu, weights=contrib, minlength=K) + np.bincount(
        table.ju, weights=contrib, minlength=K
    )
    pair_var = np.zeros((K, K))
    pair_var[table.iu, table.ju] = s2
    pair_var[table.ju, table.iu] = s2
    return ScorePosterior(mean=mean, var=var, pair_var=pair_var)


def gaussian_kl(p_mean: float, p_var: float, q_mean: float, q_var: float) -> float:
    """KL(P || Q) between two univariate Gaussians."""
    if p_var <= 0 or q_var <= 0:
        raise ValueError("variances must be positive")
    d = p_mean - q_mean
    return 0.5 * math.log(q_var / p_var) + (p_var + d * d) / (2.0 * q_var) - 0.5


def intransitivity_index(observed: ScorePosterior, predicted: ScorePosterior) -> float:
    """1 - exp of the negative mean symmetrized KL between the score
    posteriors; 0 for identical posteriors, approaching 1 as they diverge."""
    if len(observed.mean) != len(predicted.mean):
        raise ValueError(
            f"posterior sizes differ: {len(observed.mean)} vs {len(predicted.mean)}"
        )
    K = len(observed.mean)
    po, pp = np.asarray(observed.var, dtype=float), np.asarray(predicted.var, dtype=float)
    if np.any(po <= 0) or np.any(pp <= 0):
        raise ValueError("variances must be positive")
    d2 = (np.asarray(observed.mean, dtype=float) - np.asarray(predicted.mean, dtype=float)) ** 2
    # symmetrized KL; the log terms cancel pairwise
    total = float(np.sum((po + d2) / (2.0 * pp) + (pp + d2) / (2.0 * po) - 1.0))
    ii = -math.expm1(-total / (2.0 * K))
    # keep the index inside [0, 1) even when the divergence overflows
    return min(max(ii, 0.0), math.nextafter(1.0, 0.0))
