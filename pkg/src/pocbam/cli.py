"""Command-line front end: benchmark runs, single-dataset fits and diagnostics.

Every failure path prints a single `error: ...` line; exit code 2 flags bad
input (config, flags, data files), 3 flags I/O failures on the way out.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .allocation import win_probability_analysis
from .environments import (
    MatrixLoadError,
    ThurstoneGenConfig,
    generate_thurstone,
    load_matrix_env,
    save_matrix_env,
)
from .harness import (
    ConfigError,
    ReplicationError,
    load_config,
    run_benchmark,
    write_records_csv,
    write_success_csv,
)
from .model import (
    fit_mle,
    init_params,
    intransitivity_index,
    score_posterior_independent,
    score_posterior_model,
)
from .stats import StatsTable, canonical_pairs


class DataError(ValueError):
    """Sample-data file cannot be used."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _fail(code: int, message) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def read_sample_data(path) -> StatsTable:
    """Pairwise observations from a CSV with header i,j,result; the
    population size is inferred from the largest index seen."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip() for h in header] != ["i", "j", "result"]:
            raise DataError(f"{path}: header must be 'i,j,result', got {','.join(header)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                i, j, result = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: cannot parse {','.join(row)!r}") from None
            if i == j or i < 0 or j < 0:
                raise DataError(f"{path}: line {lineno}: invalid pair ({i},{j})")
            rows.append((i, j, result))
    if not rows:
        raise DataError(f"{path}: no observations")
    K = max(max(i, j) for i, j, _ in rows) + 1
    if K < 2:
        raise DataError(f"{path}: need at least two alternatives")
    table = StatsTable(K)
    for i, j, result in rows:
        table.record_sample(i, j, result)
    return table


def _require_two_per_pair(table: StatsTable, source) -> None:
    for i, j in canonical_pairs(table.K):
        n = table.pair_count(i, j)
        if n < 2:
            raise DataError(f"{source}: pair ({i},{j}) has {n} sample(s); need at least 2")


def _table_from_args(args) -> StatsTable:
    if args.data is not None:
        table = read_sample_data(args.data)
        _require_two_per_pair(table, args.data)
        return table
    if args.env is None:
        raise DataError("one of --data or --env is required")
    if args.n is None or len(args.n) != 1 or args.n[0] < 2:
        raise DataError("--env needs --n <samples per pair> with n >= 2")
    env = load_matrix_env(args.env, seed=args.seed)
    table = StatsTable(env.K)
    for _ in range(args.n[0]):
        for i, j in canonical_pairs(env.K):
            table.record_sample(i, j, env.sample(i, j))
    return table


def _write_fit_csv(table: StatsTable, out) -> None:
    params, report = fit_mle(table, init_params(table))
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["quantity", "i", "j", "value"])
        for i, g in enumerate(params.gamma):
            writer.writerow(["gamma", i, "", repr(float(g))])
        sigma = params.sigma_matrix()
        for i, j in canonical_pairs(table.K):
            writer.writerow(["sigma", i, j, repr(float(sigma[i, j]))])
        writer.writerow(["converged", "", "", str(report.converged).lower()])
        writer.writerow(["iterations", "", "", report.iterations])
        writer.writerow(["final_gradient_norm", "", "", repr(report.final_gradient_norm)])
        writer.writerow(["log_likelihood", "", "", repr(report.log_likelihood)])


def cmd_bench(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        return _fail(2, exc)
    except OSError as exc:
        return _fail(2, exc)
    if args.seed is not None:
        config.base_seed = args.seed
    try:
        result = run_benchmark(config)
    except ReplicationError as exc:
        return _fail(3, exc)
    try:
        write_records_csv(result.records, f"{args.out}.records.csv")
        write_success_csv(result.success, f"{args.out}.success.csv")
    except OSError as exc:
        return _fail(3, exc)
    return 0


def cmd_fit(args) -> int:
    try:
        table = _table_from_args(args)
    except (DataError, MatrixLoadError, OSError) as exc:
        return _fail(2, exc)
    try:
        _write_fit_csv(table, args.out)
    except OSError as exc:
        return _fail(3, exc)
    return 0


def cmd_ii(args) -> int:
    try:
        table = _table_from_args(args)
    except (DataError, MatrixLoadError, OSError) as exc:
        return _fail(2, exc)
    params, _ = fit_mle(table, init_params(table))
    value = intransitivity_index(
        score_posterior_independent(table), score_posterior_model(params, table)
    )
    print(f"{value:.6f}")
    return 0


def cmd_gen_env(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        return _fail(2, exc)
    except ValueError as exc:
        return _fail(2, f"config: invalid JSON ({exc})")
    if not isinstance(raw, dict) or "K" not in raw:
        return _fail(2, "K: required field is missing")
    try:
        gen_cfg = ThurstoneGenConfig(
            K=raw["K"],
            gamma_range=tuple(raw.get("gamma_range", (0.0, 1.0))),
            variance_range=tuple(raw.get("variance_range", (0.0, 1.0))),
            gamma_overrides={
                int(i): float(v) for i, v in (raw.get("gamma_overrides") or {}).items()
            }
            or None,
            d=args.d if args.d is not None else raw.get("d", 0.0),
        )
    except (TypeError, ValueError) as exc:
        return _fail(2, f"config: {exc}")
    env = generate_thurstone(gen_cfg, seed=args.seed)
    try:
        save_matrix_env(env, args.out)
    except OSError as exc:
        return _fail(3, exc)
    return 0


def cmd_analyze_select(args) -> int:
    if args.sigma <= 0:
        return _fail(2, f"sigma: must be positive, got {args.sigma}")
    for n in args.n:
        if n < 1:
            return _fail(2, f"n: must be >= 1, got {n}")
    for n in args.n:
        print(f"{n},{win_probability_analysis(n, args.gap, args.sigma):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pocbam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run a benchmark config, write CSVs")
    bench.add_argument("--config", required=True, help="benchmark config JSON")
    bench.add_argument("--out", required=True, help="output stem; writes <out>.records.csv and <out>.success.csv")
    bench.add_argument("--seed", type=int, default=None, help="override base seed")
    bench.set_defaults(func=cmd_bench)

    fit = sub.add_parser("fit", help="fit the quality model to observations")
    fit.add_argument("--data", default=None, help="CSV of i,j,result observations")
    fit.add_argument("--env", default=None, help="matrix environment CSV to sample from")
    fit.add_argument("--n", type=int, nargs="+", default=None, help="samples per pair when using --env")
    fit.add_argument("--seed", type=int, default=0, help="sampling seed for --env")
    fit.add_argument("--out", required=True, help="output CSV for parameters and fit report")
    fit.set_defaults(func=cmd_fit)

    ii = sub.add_parser("ii", help="print the intransitivity index of a dataset")
    ii.add_argument("--data", default=None, help="CSV of i,j,result observations")
    ii.add_argument("--env", default=None, help="matrix environment CSV to sample from")
    ii.add_argument("--n", type=int, nargs="+", default=None, help="samples per pair when using --env")
    ii.add_argument("--seed", type=int, default=0, help="sampling seed for --env")
    ii.set_defaults(func=cmd_ii)

    gen = sub.add_parser("gen-env", help="generate a matrix environment CSV")
    gen.add_argument("--config", required=True, help="generator config JSON (K, ranges, overrides, d)")
    gen.add_argument("--out", required=True, help="output matrix CSV")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--d", type=float, default=None, help="override the perturbation scale")
    gen.set_defaults(func=cmd_gen_env)

    sel = sub.add_parser("analyze-select", help="tournament win probabilities for repeated comparisons")
    sel.add_argument("--n", type=int, nargs="+", required=True, help="repetition counts")
    sel.add_argument("--gap", type=float, required=True, help="true mean outcome of the better alternative")
    sel.add_argument("--sigma", type=float, required=True, help="outcome standard deviation")
    sel.set_defaults(func=cmd_analyze_select)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
