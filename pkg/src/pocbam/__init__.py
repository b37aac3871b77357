"""Top-k subset selection for score-based dueling bandits.

Alternatives are compared in noisy pairwise duels whose outcomes are
zero-sum scores; the goal is to find the subset with the largest Borda
scores under a fixed sampling budget.  The package provides streaming
pairwise statistics, a latent-quality model fitted by maximum likelihood,
acquisition policies that allocate samples by expected gain in the
probability of correct selection, tournament baselines, ground-truth
generators and a reproducible benchmark harness with a CLI front end.
"""

from .allocation import (
    DEFAULT_II_THRESHOLD,
    DEFAULT_WARMUP,
    HybridPolicy,
    MlPocbamPolicy,
    Phase,
    PocbamPolicy,
    Policy,
    SelectTopPolicy,
    UniformPolicy,
    aepcs,
    apcs,
    best_pair_by_aepcs,
    make_policy,
    normal_cdf,
    select_topk,
    select_tournament,
    threshold_c,
    top_select,
    win_probability_analysis,
)
from .environments import (
    Environment,
    MatrixLoadError,
    NonPositiveVarianceError,
    NonSquareMatrixError,
    ThurstoneGenConfig,
    generate_thurstone,
    intransitive_triples,
    load_matrix_env,
    order_violations,
    save_matrix_env,
    true_borda,
    true_topk,
)
from .harness import (
    BenchmarkConfig,
    BenchmarkResult,
    ConfigError,
    IITraceRow,
    MethodSpec,
    ReplicationError,
    RunRecord,
    SuccessRow,
    config_from_dict,
    ii_trace,
    load_config,
    read_records_csv,
    read_success_csv,
    run_benchmark,
    run_replication,
    success_table,
    wilson_interval,
    write_records_csv,
    write_success_csv,
)
from .model import (
    FitConfig,
    FitError,
    FitReport,
    ScorePosterior,
    ThurstoneParams,
    fit_mle,
    gaussian_kl,
    init_params,
    intransitivity_index,
    ll_gradient,
    log_likelihood,
    score_posterior_independent,
    score_posterior_model,
)
from .stats import SIGMA_FLOOR, StatsTable, canonical_pairs, num_pairs, pair_index

__version__ = "0.1.0"

__all__ = [
    "SIGMA_FLOOR",
    "StatsTable",
    "canonical_pairs",
    "num_pairs",
    "pair_index",
    "ThurstoneParams",
    "ScorePosterior",
    "FitConfig",
    "FitReport",
    "FitError",
    "init_params",
    "log_likelihood",
    "ll_gradient",
    "fit_mle",
    "score_posterior_model",
    "score_posterior_independent",
    "gaussian_kl",
    "intransitivity_index",
    "normal_cdf",
    "win_probability_analysis",
    "threshold_c",
    "apcs",
    "aepcs",
    "best_pair_by_aepcs",
    "select_topk",
    "Phase",
    "Policy",
    "UniformPolicy",
    "PocbamPolicy",
    "MlPocbamPolicy",
    "HybridPolicy",
    "SelectTopPolicy",
    "make_policy",
    "select_tournament",
    "top_select",
    "DEFAULT_WARMUP",
    "DEFAULT_II_THRESHOLD",
    "Environment",
    "ThurstoneGenConfig",
    "generate_thurstone",
    "true_borda",
    "true_topk",
    "order_violations",
    "intransitive_triples",
    "save_matrix_env",
    "load_matrix_env",
    "MatrixLoadError",
    "NonSquareMatrixError",
    "NonPositiveVarianceError",
    "BenchmarkConfig",
    "MethodSpec",
    "RunRecord",
    "SuccessRow",
    "BenchmarkResult",
    "IITraceRow",
    "ConfigError",
    "ReplicationError",
    "config_from_dict",
    "load_config",
    "run_replication",
    "run_benchmark",
    "success_table",
    "ii_trace",
    "wilson_interval",
    "write_records_csv",
    "read_records_csv",
    "write_success_csv",
    "read_success_csv",
    "__version__",
]
