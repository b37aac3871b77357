"""Reproducible benchmark harness.

Replicated runs share one ground-truth environment per replication index
(common random numbers across methods) while each method samples from its
own stream.  Correctness is recorded at configured checkpoint budgets and
aggregated into success-rate tables with Wilson intervals.  Everything is
a pure function of the configuration, so reruns produce byte-identical
CSV output.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .allocation import (
    DEFAULT_II_THRESHOLD,
    DEFAULT_WARMUP,
    HybridPolicy,
    MlPocbamPolicy,
    SelectTopPolicy,
    make_policy,
)
from .environments import (
    Environment,
    ThurstoneGenConfig,
    generate_thurstone,
    load_matrix_env,
    true_topk,
)
from .stats import num_pairs

BUDGETED_METHODS = ("uniform", "pocbam", "ml-pocbam", "hybrid")

# sub-stream tags so environment draws, method sampling and tie coins never
# collide even though they all descend from (base_seed, replication)
_STREAM_SAMPLING = 101
_STREAM_COIN = 211


class ConfigError(ValueError):
    """Invalid benchmark configuration; the message names the field."""


class ReplicationError(RuntimeError):
    """A policy failed inside a replication; carries the run context."""


@dataclass
class MethodSpec:
    """One concrete method instance in a benchmark.

    select-top carries its repetition count nu; the label distinguishes
    swept instances (e.g. ``select-top(nu=20)``).
    """

    method: str
    nu: int | None = None
    ii_threshold: float = DEFAULT_II_THRESHOLD
    refit_every: int = 1

    @property
    def label(self) -> str:
        if self.method == "select-top":
            return f"select-top(nu={self.nu})"
        return self.method

    @property
    def budgeted(self) -> bool:
        return self.method in BUDGETED_METHODS


@dataclass
class BenchmarkConfig:
    K: int
    k: int
    budget: int
    methods: list[MethodSpec]
    environment: ThurstoneGenConfig | str  # generator config or matrix CSV path
    n_0: int = DEFAULT_WARMUP
    replications: int = 500
    base_seed: int = 0
    checkpoints: list[int] = field(default_factory=list)
    d_values: list[float] = field(default_factory=list)
    workers: int = 1

    def __post_init__(self):
        validate_config(self)
        if not self.checkpoints:
            self.checkpoints = default_checkpoints(self.K, self.budget)


def default_checkpoints(K: int, budget: int, every: int = 50) -> list[int]:
    """Multiples of `every` up to the budget, skipping steps where some pair
    is still unsampled; the final budget is always included."""
    first_valid = num_pairs(K)
    steps = [s for s in range(every, budget + 1, every) if s >= first_valid]
    if not steps or steps[-1] != budget:
        steps.append(budget)
    return steps


def validate_config(cfg: BenchmarkConfig) -> None:
    if cfg.K < 2:
        raise ConfigError(f"K: must be >= 2, got {cfg.K}")
    if not 1 <= cfg.k < cfg.K:
        raise ConfigError(f"k: must satisfy 1 <= k < K, got {cfg.k}")
    if cfg.replications < 1:
        raise ConfigError(f"replications: must be >= 1, got {cfg.replications}")
    if cfg.n_0 < 1:
        raise ConfigError(f"n_0: must be >= 1, got {cfg.n_0}")
    if cfg.workers < 1:
        raise ConfigError(f"workers: must be >= 1, got {cfg.workers}")
    if not cfg.methods:
        raise ConfigError("methods: at least one method is required")
    known = set(BUDGETED_METHODS) | {"select-top"}
    warmup_total = cfg.n_0 * num_pairs(cfg.K)
    for idx, spec in enumerate(cfg.methods):
        if spec.method not in known:
            raise ConfigError(f"methods[{idx}].method: unknown method {spec.method!r}")
        if spec.method == "select-top":
            if spec.nu is None or spec.nu < 1:
                raise ConfigError(f"methods[{idx}].nu: select-top needs nu >= 1")
        if spec.method in ("ml-pocbam", "hybrid") and spec.refit_every < 1:
            raise ConfigError(f"methods[{idx}].refit_every: must be >= 1")
        if spec.method in ("pocbam", "hybrid") and cfg.n_0 < 2:
            raise ConfigError(
                f"methods[{idx}].method: {spec.method} needs n_0 >= 2 for pair variances"
            )
        if spec.budgeted and cfg.budget < warmup_total:
            raise ConfigError(
                f"budget: must cover warm-up n_0*K(K-1)/2 = {warmup_total}, got {cfg.budget}"
            )
    if cfg.checkpoints:
        first_valid = num_pairs(cfg.K)
        if sorted(cfg.checkpoints) != list(cfg.checkpoints):
            raise ConfigError("checkpoints: must be sorted ascending")
        if cfg.checkpoints[0] < first_valid:
            raise ConfigError(
                f"checkpoints: first checkpoint {cfg.checkpoints[0]} precedes full "
                f"pair coverage at {first_valid}"
            )
        if cfg.checkpoints[-1] > cfg.budget:
            raise ConfigError(
                f"checkpoints: last checkpoint {cfg.checkpoints[-1]} exceeds budget {cfg.budget}"
            )
    if isinstance(cfg.environment, ThurstoneGenConfig) and cfg.environment.K != cfg.K:
        raise ConfigError(
            f"environment.K: {cfg.environment.K} does not match benchmark K={cfg.K}"
        )
    for idx, d in enumerate(cfg.d_values):
        if d < 0:
            raise ConfigError(f"d_values[{idx}]: must be >= 0, got {d}")


def _method_from_dict(idx: int, raw: dict) -> MethodSpec:
    if not isinstance(raw, dict) or "method" not in raw:
        raise ConfigError(f"methods[{idx}]: expected an object with a 'method' key")
    allowed = {"method", "nu", "ii_threshold", "refit_every"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"methods[{idx}].{sorted(unknown)[0]}: unknown key")
    return MethodSpec(
        method=raw["method"],
        nu=raw.get("nu"),
        ii_threshold=raw.get("ii_threshold", DEFAULT_II_THRESHOLD),
        refit_every=raw.get("refit_every", 1),
    )


def expand_methods(raw_list) -> list[MethodSpec]:
    """Method entries from config data; a select-top nu list becomes one
    labeled instance per nu."""
    specs: list[MethodSpec] = []
    for idx, raw in enumerate(raw_list):
        if isinstance(raw, dict) and raw.get("method") == "select-top" and isinstance(
            raw.get("nu"), (list, tuple)
        ):
            for nu in raw["nu"]:
                specs.append(_method_from_dict(idx, {**raw, "nu": nu}))
        else:
            specs.append(_method_from_dict(idx, raw))
    return specs


def config_from_dict(data: dict) -> BenchmarkConfig:
    """BenchmarkConfig from parsed JSON, reporting the offending field on error."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    required = ("K", "k", "budget", "methods", "environment")
    for name in required:
        if name not in data:
            raise ConfigError(f"{name}: required field is missing")
    allowed = {
        "K", "k", "budget", "methods", "environment", "n_0", "replications",
        "base_seed", "checkpoints", "d_values", "workers",
    }
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")

    env_raw = data["environment"]
    environment: ThurstoneGenConfig | str
    if isinstance(env_raw, str):
        environment = env_raw
    elif isinstance(env_raw, dict):
        kind = env_raw.get("kind", "thurstone")
        if kind == "matrix":
            if "path" not in env_raw:
                raise ConfigError("environment.path: required for matrix environments")
            environment = env_raw["path"]
        elif kind == "thurstone":
            allowed_env = {"kind", "K", "gamma_range", "variance_range", "gamma_overrides", "d"}
            unknown_env = set(env_raw) - allowed_env
            if unknown_env:
                raise ConfigError(f"environment.{sorted(unknown_env)[0]}: unknown field")
            try:
                environment = ThurstoneGenConfig(
                    K=env_raw.get("K", data["K"]),
                    gamma_range=tuple(env_raw.get("gamma_range", (0.0, 1.0))),
                    variance_range=tuple(env_raw.get("variance_range", (0.0, 1.0))),
                    gamma_overrides={
                        int(i): float(v)
                        for i, v in (env_raw.get("gamma_overrides") or {}).items()
                    }
                    or None,
                    d=env_raw.get("d", 0.0),
                )
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"environment: {exc}") from None
        else:
            raise ConfigError(f"environment.kind: unknown kind {kind!r}")
    else:
        raise ConfigError("environment: expected an object or a matrix CSV path")

    try:
        return BenchmarkConfig(
            K=data["K"],
            k=data["k"],
            budget=data["budget"],
            methods=expand_methods(data["methods"]),
            environment=environment,
            n_0=data.get("n_0", DEFAULT_WARMUP),
            replications=data.get("replications", 500),
            base_seed=data.get("base_seed", 0),
            checkpoints=list(data.get("checkpoints", [])),
            d_values=list(data.get("d_values", [])),
            workers=data.get("workers", 1),
        )
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from None


def load_config(path) -> BenchmarkConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
    return config_from_dict(data)


@dataclass
class RunRecord:
    method: str
    replication: int
    step: int
    correct: int
    ii: float | None
    pairs_sampled: int


@dataclass
class SuccessRow:
    method: str
    step: int
    rate: float
    ci_low: float
    ci_high: float
    mean_samples: float


_Z95 = 1.959963984540054  # two-sided 95% normal quantile


def wilson_interval(successes: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("need at least one trial")
    phat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (phat + z2 / (2 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z2 / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def build_environment(config: BenchmarkConfig, replication: int) -> Environment:
    """Ground truth for one replication — identical for every method."""
    if isinstance(config.environment, ThurstoneGenConfig):
        return generate_thurstone(config.environment, seed=[config.base_seed, replication])
    return load_matrix_env(config.environment, seed=[config.base_seed, replication])


def run_replication(
    config: BenchmarkConfig, spec: MethodSpec, replication: int
) -> list[RunRecord]:
    """One method on one replication's environment, recording correctness at
    every checkpoint (budgeted methods) or at completion (select-top)."""
    try:
        env = build_environment(config, replication)
        truth = true_topk(env, config.k)
        method_idx = config.methods.index(spec)
        env = env.with_stream(
            np.random.default_rng(
                [config.base_seed, replication, _STREAM_SAMPLING, method_idx]
            )
        )
        if spec.method == "select-top":
            coin = np.random.default_rng(
                [config.base_seed, replication, _STREAM_COIN, method_idx]
            )
            policy = SelectTopPolicy(config.K, config.k, spec.nu, coin)
            while not policy.finished:
                pair = policy.next_pair()
                policy.observe(pair, env.sample(*pair))
            correct = int(policy.current_selection() == truth)
            return [
                RunRecord(
                    method=spec.label,
                    replication=replication,
                    step=policy.steps,
                    correct=correct,
                    ii=None,
                    pairs_sampled=policy.steps,
                )
            ]

        policy = make_policy(
            spec.method,
            config.K,
            config.k,
            config.budget,
            n_0=config.n_0,
            refit_every=spec.refit_every,
            ii_threshold=spec.ii_threshold,
        )
        marks = set(config.checkpoints)
        records = []
        for step in range(1, config.budget + 1):
            pair = policy.next_pair()
            policy.observe(pair, env.sample(*pair))
            if step in marks:
                correct = int(policy.current_selection() == truth)
                ii = None
                if isinstance(policy, (MlPocbamPolicy, HybridPolicy)):
                    try:
                        ii = policy.current_ii()
                    except ValueError:
                        ii = None  # some pair still below two samples
                records.append(
                    RunRecord(
                        method=spec.label,
                        replication=replication,
                        step=step,
                        correct=correct,
                        ii=ii,
                        pairs_sampled=step,
                    )
                )
        return records
    except ReplicationError:
        raise
    except Exception as exc:
        raise ReplicationError(
            f"method {spec.label}, replication {replication}: {exc}"
        ) from exc


def _replication_task(args) -> list[RunRecord]:
    config, spec, replication = args
    return run_replication(config, spec, replication)


@dataclass
class BenchmarkResult:
    records: list[RunRecord]
    success: list[SuccessRow]


def success_table(config: BenchmarkConfig, records: list[RunRecord]) -> list[SuccessRow]:
    """Success rates with Wilson 95% intervals, per method and checkpoint.

    Budgeted methods get one row per checkpoint; each select-top instance
    gets a single row at its mean (rounded) sample count.
    """
    rows: list[SuccessRow] = []
    by_method: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec)
    for spec in config.methods:
        recs = by_method.get(spec.label, [])
        if spec.budgeted:
            for step in config.checkpoints:
                at_step = [r for r in recs if r.step == step]
                if not at_step:
                    continue
                wins = sum(r.correct for r in at_step)
                lo, hi = wilson_interval(wins, len(at_step))
                rows.append(
                    SuccessRow(spec.label, step, wins / len(at_step), lo, hi, float(step))
                )
        else:
            if not recs:
                continue
            wins = sum(r.correct for r in recs)
            lo, hi = wilson_interval(wins, len(recs))
            mean_samples = sum(r.step for r in recs) / len(recs)
            rows.append(
                SuccessRow(
                    spec.label,
                    int(round(mean_samples)),
                    wins / len(recs),
                    lo,
                    hi,
                    mean_samples,
                )
            )
    return rows


def run_benchmark(config: BenchmarkConfig, workers: int | None = None) -> BenchmarkResult:
    """All methods over all replications; deterministic in the config."""
    n_workers = config.workers if workers is None else workers
    tasks = [
        (config, spec, rep)
        for spec in config.methods
        for rep in range(config.replications)
    ]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            chunks = list(pool.map(_replication_task, tasks, chunksize=8))
    else:
        chunks = [_replication_task(t) for t in tasks]
    records = [rec for chunk in chunks for rec in chunk]
    return BenchmarkResult(records=records, success=success_table(config, records))


@dataclass
class IITraceRow:
    d: float
    step: int
    mean_ii: float


def ii_trace(config: BenchmarkConfig, workers: int | None = None) -> list[IITraceRow]:
    """Mean intransitivity index under model-based sampling, per perturbation
    scale in config.d_values and per checkpoint."""
    if not config.d_values:
        raise ConfigError("d_values: ii_trace needs at least one d value")
    if not isinstance(config.environment, ThurstoneGenConfig):
        raise ConfigError("environment: ii_trace needs a generator environment")
    spec = next((m for m in config.methods if m.method == "ml-pocbam"), MethodSpec("ml-pocbam"))
    rows: list[IITraceRow] = []
    for d in config.d_values:
        sub = replace(
            config,
            methods=[spec],
            environment=replace(config.environment, d=d),
            checkpoints=list(config.checkpoints),
        )
        result = run_benchmark(sub, workers=workers)
        for step in sub.checkpoints:
            values = [r.ii for r in result.records if r.step == step and r.ii is not None]
            if values:
                rows.append(IITraceRow(d=d, step=step, mean_ii=sum(values) / len(values)))
    return rows


# --------------------------------------------------------------------------
# CSV plumbing


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_records_csv(records: list[RunRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "replication", "step", "correct", "ii", "pairs_sampled"])
        for r in records:
            writer.writerow(
                [r.method, r.replication, r.step, r.correct, _fmt(r.ii), r.pairs_sampled]
            )


def read_records_csv(path) -> list[RunRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            RunRecord(
                method=row["method"],
                replication=int(row["replication"]),
                step=int(row["step"]),
                correct=int(row["correct"]),
                ii=float(row["ii"]) if row["ii"] else None,
                pairs_sampled=int(row["pairs_sampled"]),
            )
            for row in reader
        ]


def write_success_csv(rows: list[SuccessRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "step", "rate", "ci_low", "ci_high", "mean_samples"])
        for r in rows:
            writer.writerow(
                [r.method, r.step, _fmt(r.rate), _fmt(r.ci_low), _fmt(r.ci_high), _fmt(r.mean_samples)]
            )


def read_success_csv(path) -> list[SuccessRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            SuccessRow(
                method=row["method"],
                step=int(row["step"]),
                rate=float(row["rate"]),
                ci_low=float(row["ci_low"]),
                ci_high=float(row["ci_high"]),
                mean_samples=float(row["mean_samples"]),
            )
            for row in reader
        ]


def write_ii_trace_csv(rows: list[IITraceRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["d", "step", "mean_ii"])
        for r in rows:
            writer.writerow([_fmt(r.d), r.step, _fmt(r.mean_ii)])
