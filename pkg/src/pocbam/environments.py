"""Ground-truth environments: pairwise mean/variance matrices plus a
seeded sampling oracle.

A quality-difference generator covers the transitive case; an additive
per-pair mean perturbation of scale d introduces controlled intransitivity.
Externally supplied ground truth loads from a plain CSV matrix file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stats import SIGMA_FLOOR, num_pairs


class MatrixLoadError(ValueError):
    """Matrix environment file cannot be parsed."""


class NonSquareMatrixError(MatrixLoadError):
    """Row/column counts do not match the declared population size."""


class NonPositiveVarianceError(MatrixLoadError):
    """Variance matrix contains entries <= 0."""


@dataclass
class ThurstoneGenConfig:
    """Generator settings for quality-difference environments."""

    K: int
    gamma_range: tuple[float, float] = (0.0, 1.0)
    variance_range: tuple[float, float] = (0.0, 1.0)
    gamma_overrides: dict[int, float] | None = None
    d: float = 0.0  # stddev of the additive per-pair mean perturbation

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if self.gamma_range[1] <= self.gamma_range[0]:
            raise ValueError(f"degenerate gamma_range {self.gamma_range}")
        if self.variance_range[1] <= self.variance_range[0]:
            raise ValueError(f"degenerate variance_range {self.variance_range}")
        if self.d < 0:
            raise ValueError(f"perturbation scale d must be >= 0, got {self.d}")


@dataclass
class Environment:
    """True pairwise means/variances and the stream samples are drawn from."""

    mu: np.ndarray   # (K, K) skew-symmetric
    var: np.ndarray  # (K, K) symmetric, positive off-diagonal
    rng: np.random.Generator
    _sd: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._sd = np.sqrt(self.var)

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    def sample(self, i: int, j: int) -> float:
        """One outcome of comparing (i, j); each call is an independent draw."""
        if i == j:
            raise ValueError(f"self-comparison ({i},{i}) is undefined")
        return float(self.rng.normal(self.mu[i, j], self._sd[i, j]))

    def with_stream(self, seed) -> "Environment":
        """Same ground truth, fresh sampling stream."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return Environment(mu=self.mu, var=self.var, rng=rng)


def generate_thurstone(config: ThurstoneGenConfig, seed) -> Environment:
    """Draw an environment: qualities and pair variances uniform over their
    ranges, pair means = quality gaps plus optional N(0, d^2) perturbations."""
    ss = np.random.SeedSequence(seed)
    param_ss, sample_ss = ss.spawn(2)
    rng = np.random.default_rng(param_ss)
    K = config.K
    gamma = rng.uniform(*config.gamma_range, size=K)
    if config.gamma_overrides:
        for idx, value in config.gamma_overrides.items():
            gamma[int(idx)] = float(value)
    P = num_pairs(K)
    var_floor = SIGMA_FLOOR
    var_pairs = rng.uniform(*config.variance_range, size=P)
    while np.any(var_pairs < var_floor):
        redraw = var_pairs < var_floor
        var_pairs[redraw] = rng.uniform(*config.variance_range, size=int(redraw.sum()))
    eps = rng.normal(0.0, config.d, size=P) if config.d > 0 else np.zeros(P)

    iu, ju = np.triu_indices(K, 1)
    mu = np.zeros((K, K))
    mu[iu, ju] = gamma[iu] - gamma[ju] + eps
    mu[ju, iu] = -mu[iu, ju]
    var = np.zeros((K, K))
    var[iu, ju] = var_pairs
    var[ju, iu] = var_pairs
    return Environment(mu=mu, var=var, rng=np.random.default_rng(sample_ss))


def true_borda(env: Environment) -> np.ndarray:
    """True score of every alternative: row sums of the mean matrix."""
    return env.mu.sum(axis=1)


def true_topk(env: Environment, k: int) -> tuple[int, ...]:
    """Indices of the k largest true scores, ties to the lower index."""
    if k > env.K:
        raise ValueError(f"k={k} exceeds population size {env.K}")
    scores = true_borda(env)
    order = np.lexsort((np.arange(env.K), -scores))
    return tuple(sorted(int(i) for i in order[:k]))


def order_violations(env: Environment) -> int:
    """Negative means in the upper triangle once rows/cols are put in true
    score order; 0 means a total ordering holds."""
    order = np.lexsort((np.arange(env.K), -true_borda(env)))
    m = env.mu[np.ix_(order, order)]
    iu, ju = np.triu_indices(env.K, 1)
    return int(np.sum(m[iu, ju] < 0))


def intransitive_triples(env: Environment) -> int:
    """Ordered triples (i, j, k) with mu_ij > 0, mu_jk > 0 but mu_ik < 0."""
    pos = (env.mu > 0).astype(np.int64)
    neg = env.mu < 0
    two_step = pos @ pos
    return int(np.sum(two_step[neg]))


def save_matrix_env(env: Environment, path) -> None:
    """Write the mean and variance matrices with full float precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"K={env.K}\n")
        for row in env.mu:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
        fh.write("\n")
        for row in env.var:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _parse_matrix(lines: list[str], K: int, start: int, what: str) -> np.ndarray:
    rows = []
    for r in range(K):
        if start + r >= len(lines):
            raise MatrixLoadError(f"{what} matrix truncated at row {r}")
        cells = lines[start + r].split(",")
        if len(cells) != K:
            raise NonSquareMatrixError(
                f"{what} matrix row {r} has {len(cells)} entries, expected {K}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise MatrixLoadError(f"{what} matrix row {r}: {exc}") from None
    return np.array(rows)


def load_matrix_env(path, seed) -> Environment:
    """Load an environment from the matrix CSV format written by
    save_matrix_env: a `K=<int>` header, K mean rows, a blank line, K
    variance rows."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("K="):
        raise MatrixLoadError("first line must be 'K=<int>'")
    try:
        K = int(lines[0][2:])
    except ValueError:
        raise MatrixLoadError(f"cannot parse population size from {lines[0]!r}") from None
    if K < 2:
        raise MatrixLoadError(f"population size must be >= 2, got {K}")
    mu = _parse_matrix(lines, K, 1, "mean")
    if 1 + K >= len(lines) or lines[1 + K].strip() != "":
        raise MatrixLoadError("expected a blank line between mean and variance matrices")
    var = _parse_matrix(lines, K, 2 + K, "variance")

    skew_err = float(np.max(np.abs(mu + mu.T)))
    if skew_err > 1e-9:
        raise MatrixLoadError(
            f"mean matrix is not skew-symmetric (max |M + M^T| = {skew_err:g})"
        )
    mu = (mu - mu.T) / 2.0
    iu, ju = np.triu_indices(K, 1)
    var = (var + var.T) / 2.0
    if np.any(var[iu, ju] <= 0):
        bad = int(np.sum(var[iu, ju] <= 0))
        raise NonPositiveVarianceError(f"{bad} pair variance(s) are <= 0")
    np.fill_diagonal(var, 0.0)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Environment(mu=mu, var=var, rng=rng)
