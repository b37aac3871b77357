"""End-to-end acceptance checks for the whole package.

Each test here covers one headline claim — gradient exactness, closed-form
win probabilities, parameter recovery, the benchmark orderings at desk
scale, intransitivity-index behaviour, hybrid safety, structural
properties, and a reduced large-K smoke run — and prints a single
``[PASS]``/``[FAIL]`` line with the measured numbers next to the bound it
enforces.  The line is printed before the assertion so the summary is
visible even when a bound is missed.

The benchmark-scale tests replay full multi-replication studies and take
minutes each (the large-K smoke dominates at roughly twelve minutes); run
``pytest tests -k "not acceptance"`` while iterating and save this module
for full verification passes.  Every study is seeded, so reruns reproduce
the same numbers byte for byte.
"""

import math
import time

import numpy as np
import pytest

from helpers import fd_gradients, make_table, random_params, random_samples

from pocbam import (
    BenchmarkConfig,
    MethodSpec,
    ScorePosterior,
    StatsTable,
    ThurstoneGenConfig,
    aepcs,
    apcs,
    best_pair_by_aepcs,
    canonical_pairs,
    fit_mle,
    generate_thurstone,
    ii_trace,
    init_params,
    intransitive_triples,
    intransitivity_index,
    ll_gradient,
    log_likelihood,
    normal_cdf,
    run_benchmark,
    save_matrix_env,
    score_posterior_independent,
    select_topk,
    threshold_c,
    true_borda,
    win_probability_analysis,
    write_records_csv,
    write_success_csv,
)
from pocbam.model import ThurstoneParams


@pytest.fixture
def announce(capsys):
    """Print one uncaptured summary line per acceptance check."""

    def _say(ok: bool, label: str, detail: str) -> bool:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        return ok

    return _say


def _rates(result, method):
    """step -> SuccessRow for one method of a benchmark result."""
    return {row.step: row for row in result.success if row.method == method}


def _pooled_2se(p1, p2, n):
    """Twice the pooled two-proportion standard error at equal n."""
    pbar = (p1 + p2) / 2
    return 2.0 * math.sqrt(pbar * (1 - pbar) * 2 / n)


def _diff_se(p1, p2, n):
    """Standard error of a difference of independent proportions."""
    return math.sqrt(p1 * (1 - p1) / n + p2 * (1 - p2) / n)


# ---------------------------------------------------------------------------
# fast analytic checks


def test_gradient_accuracy(announce):
    rng = np.random.default_rng(3)
    t0 = time.monotonic()
    worst = 0.0
    for case in range(100):
        K = (3, 5, 8)[case % 3]
        table = make_table(K, random_samples(rng, K))
        params = random_params(rng, K)
        d_gamma, d_sigma = ll_gradient(params, table)
        fd_g, fd_s = fd_gradients(params, table, step=1e-5)
        ok_g = np.allclose(d_gamma, fd_g, rtol=1e-5, atol=1e-7)
        ok_s = np.allclose(d_sigma, fd_s, rtol=1e-5, atol=1e-7)
        scale = np.maximum(np.abs(np.concatenate([fd_g, fd_s])), 1e-7)
        rel = np.abs(np.concatenate([d_gamma - fd_g, d_sigma - fd_s])) / scale
        worst = max(worst, float(rel.max()))
        assert ok_g and ok_s, f"case {case} (K={K}): worst relative error {rel.max():.2e}"
    elapsed = time.monotonic() - t0
    ok = elapsed < 10.0
    announce(
        ok,
        "analytic gradients vs central differences",
        f"100 instances K in {{3,5,8}}, worst relative error {worst:.2e} "
        f"(bound 1e-5), elapsed {elapsed:.1f}s (bound 10s)",
    )
    assert ok, f"gradient sweep took {elapsed:.1f}s"


def test_win_probability_values(announce):
    got1 = win_probability_analysis(1, 1 / 11, 0.5)
    got10 = win_probability_analysis(10, 1 / 11, 0.5)
    ok = abs(got1 - 0.572) <= 0.001 and abs(got10 - 0.717) <= 0.001
    announce(
        ok,
        "closed-form win probabilities",
        f"n=1 -> {got1:.4f} (want 0.572 +/- 0.001), n=10 -> {got10:.4f} (want 0.717 +/- 0.001)",
    )
    assert ok, f"win probabilities off: n=1 {got1:.4f}, n=10 {got10:.4f}"


def test_mle_recovery(announce):
    t0 = time.monotonic()
    worst_gamma, worst_sigma = 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng([101, seed])
        K = 5
        gamma = np.concatenate([[0.0], rng.uniform(0.0, 1.0, K - 1)])
        sigma = rng.uniform(0.5, 1.5, K * (K - 1) // 2)
        table = StatsTable(K)
        for idx, (i, j) in enumerate(canonical_pairs(K)):
            for r in rng.normal(gamma[i] - gamma[j], sigma[idx], size=2000):
                table.record_sample(i, j, float(r))
        params, _ = fit_mle(table, init_params(table))
        diff_true = gamma[:, None] - gamma[None, :]
        diff_fit = params.gamma[:, None] - params.gamma[None, :]
        worst_gamma = max(worst_gamma, float(np.max(np.abs(diff_fit - diff_true))))
        worst_sigma = max(worst_sigma, float(np.max(np.abs(params.sigma - sigma) / sigma)))
    elapsed = time.monotonic() - t0
    ok = worst_gamma < 0.05 and worst_sigma < 0.05 and elapsed < 60.0
    announce(
        ok,
        "quality recovery from dense sampling",
        f"20 seeds, K=5, 2000 samples/pair: worst quality-difference error "
        f"{worst_gamma:.4f} (bound 0.05), worst noise-scale relative error "
        f"{worst_sigma:.4f} (bound 0.05), elapsed {elapsed:.1f}s (bound 60s)",
    )
    assert ok, (
        f"recovery out of tolerance: gamma {worst_gamma:.4f}, sigma {worst_sigma:.4f}, "
        f"{elapsed:.1f}s"
    )


def test_structural_properties(announce, tmp_path):
    rng = np.random.default_rng(5)
    checks = {}

    # skew symmetry: recording the mirrored sample stream builds the same
    # table, and every pair mean is the negation of its reverse
    t1, t2 = StatsTable(5), StatsTable(5)
    for i, j, r in random_samples(rng, 5, extra=40):
        t1.record_sample(i, j, r)
        t2.record_sample(j, i, -r)
    checks["skew-symmetry"] = all(
        t1.pair_count(i, j) == t2.pair_count(i, j)
        and math.isclose(t1.pair_mean(i, j), t2.pair_mean(i, j), abs_tol=1e-12)
        and math.isclose(t1.pair_mean(i, j), -t1.pair_mean(j, i), abs_tol=1e-12)
        for i, j in canonical_pairs(5)
    )

    # Borda estimates and ground-truth Borda scores sum to zero
    env = generate_thurstone(ThurstoneGenConfig(K=8), seed=9)
    borda_hat = sum(t1.borda_estimate(i) for i in range(5))
    checks["borda-sum-zero"] = (
        math.isclose(borda_hat, 0.0, abs_tol=1e-9)
        and math.isclose(float(np.sum(true_borda(env))), 0.0, abs_tol=1e-9)
    )

    # the separating threshold sits between the k-th and (k+1)-th means
    sandwich = True
    for trial in range(20):
        K = int(rng.integers(4, 10))
        table = make_table(K, random_samples(rng, K, min_per_pair=3, extra=60))
        post = score_posterior_independent(table)
        order = np.sort(post.mean)[::-1]
        for k in range(1, K):
            c = threshold_c(post, k)
            sandwich &= order[k] <= c <= order[k - 1]
    checks["threshold-sandwich"] = sandwich

    # APCS factorizes over alternatives, and the one-pair lookahead scan
    # (which only swaps the two endpoint factors) matches brute force
    factor_ok, scan_ok = True, True
    for trial in range(20):
        K = int(rng.integers(4, 9))
        k = int(rng.integers(1, K))
        table = make_table(K, random_samples(rng, K, min_per_pair=3, extra=60))
        post = score_posterior_independent(table)
        sel = select_topk(post, k)
        c = threshold_c(post, k)
        prod = 1.0
        for idx in range(K):
            z = (post.mean[idx] - c) / math.sqrt(post.var[idx])
            prod *= normal_cdf(z) if idx in sel else normal_cdf(-z)
        factor_ok &= math.isclose(prod, apcs(post, sel, c), rel_tol=1e-12)
        best = max(
            canonical_pairs(K),
            key=lambda pair: aepcs(post, table, sel, pair, c),
        )
        scan_ok &= best_pair_by_aepcs(post, table, sel, c) == best
    checks["apcs-factorization"] = factor_ok and scan_ok

    # likelihood is invariant under a common shift of all qualities
    gauge_ok = True
    for trial in range(10):
        K = int(rng.integers(3, 8))
        table = make_table(K, random_samples(rng, K))
        params = random_params(rng, K)
        shifted = ThurstoneParams(params.gamma + 3.7, params.sigma.copy())
        gauge_ok &= math.isclose(
            log_likelihood(params, table), log_likelihood(shifted, table), abs_tol=1e-8
        )
    checks["gauge-invariance"] = gauge_ok

    # a fixed-seed benchmark reproduces its output files byte for byte
    cfg = BenchmarkConfig(
        K=4,
        k=2,
        budget=60,
        methods=[MethodSpec("ml-pocbam"), MethodSpec("pocbam"), MethodSpec("uniform")],
        environment=ThurstoneGenConfig(K=4),
        n_0=3,
        replications=3,
        base_seed=7,
        checkpoints=[30, 60],
    )
    blobs = []
    for run in ("a", "b"):
        res = run_benchmark(cfg)
        rec_path = tmp_path / f"records_{run}.csv"
        suc_path = tmp_path / f"success_{run}.csv"
        write_records_csv(res.records, rec_path)
        write_success_csv(res.success, suc_path)
        blobs.append((rec_path.read_bytes(), suc_path.read_bytes()))
    checks["byte-determinism"] = blobs[0] == blobs[1]

    ok = all(checks.values())
    announce(
        ok,
        "structural property suite",
        ", ".join(f"{name} {'ok' if good else 'FAILED'}" for name, good in checks.items()),
    )
    assert ok, f"failed properties: {[n for n, good in checks.items() if not good]}"


# ---------------------------------------------------------------------------
# benchmark-scale checks (minutes each; numbers below are from the pinned
# seeds and reproduce exactly on rerun)


def test_ii_properties(announce):
    rng = np.random.default_rng(11)

    range_ok = True
    for trial in range(200):
        K = int(rng.integers(3, 12))
        a = ScorePosterior(mean=rng.normal(0, 5, K), var=rng.uniform(1e-6, 10.0, K))
        b = ScorePosterior(mean=rng.normal(0, 5, K), var=rng.uniform(1e-6, 10.0, K))
        v = intransitivity_index(a, b)
        range_ok &= 0.0 <= v < 1.0
    far = ScorePosterior(mean=np.array([0.0, 1e9]), var=np.array([1e-6, 1e-6]))
    near = ScorePosterior(mean=np.array([0.0, 0.0]), var=np.array([1.0, 1.0]))
    range_ok &= 0.0 <= intransitivity_index(far, near) < 1.0

    same = ScorePosterior(mean=rng.normal(0, 1, 6), var=rng.uniform(0.1, 2.0, 6))
    zero_ok = intransitivity_index(same, same) == 0.0

    cfg = BenchmarkConfig(
        K=10,
        k=4,
        budget=385,
        methods=[MethodSpec("ml-pocbam")],
        environment=ThurstoneGenConfig(K=10),
        n_0=3,
        replications=200,
        base_seed=0,
        checkpoints=[385],
        d_values=[0.1, 0.2, 0.3, 0.4],
    )
    rows = ii_trace(cfg)
    means = [row.mean_ii for row in rows]
    trend_ok = all(hi >= lo for lo, hi in zip(means, means[1:]))

    ok = range_ok and zero_ok and trend_ok
    announce(
        ok,
        "intransitivity index properties",
        f"range [0,1) ok={range_ok}, zero on identical posteriors ok={zero_ok}, "
        "mean index over d=0.1..0.4 = "
        + "/".join(f"{m:.4f}" for m in means)
        + f" non-decreasing={trend_ok} (200 replications)",
    )
    assert ok, f"range={range_ok} zero={zero_ok} trend={means}"


def test_model_gate_crossover(announce):
    """Model-based vs independent allocation at 250 post-warm-up samples.

    The bounds encoded here expect the model-based method to lead on nearly
    transitive environments (d=0.1) and trail on strongly intransitive ones
    (d=0.4), each by at least two standard errors, with the mean
    intransitivity index landing either side of the 0.17 gate.  On this
    implementation the d=0.1 clauses do not hold: at warm-up-sized counts
    (three samples per pair) the fitted model ranks no better than the raw
    score means, and the index noise floor sits near 0.32.  The test states
    the measured numbers and fails honestly rather than loosening the bound.
    """
    measured = {}
    for d in (0.1, 0.4):
        cfg = BenchmarkConfig(
            K=10,
            k=4,
            budget=385,
            methods=[MethodSpec("ml-pocbam"), MethodSpec("pocbam")],
            environment=ThurstoneGenConfig(K=10, d=d),
            n_0=3,
            replications=500,
            base_seed=0,
            checkpoints=[385],
        )
        res = run_benchmark(cfg)
        ml = _rates(res, "ml-pocbam")[385].rate
        po = _rates(res, "pocbam")[385].rate
        iis = [r.ii for r in res.records if r.method == "ml-pocbam" and r.ii is not None]
        measured[d] = (ml, po, ml - po, _diff_se(ml, po, 500), float(np.mean(iis)))

    gap1, se1, ii1 = measured[0.1][2], measured[0.1][3], measured[0.1][4]
    gap4, se4, ii4 = measured[0.4][2], measured[0.4][3], measured[0.4][4]
    lead_ok = gap1 >= 2 * se1
    trail_ok = gap4 <= -2 * se4
    ii_low_ok = ii1 < 0.17
    ii_high_ok = ii4 > 0.17
    ok = lead_ok and trail_ok and ii_low_ok and ii_high_ok
    announce(
        ok,
        "model-gate crossover at fixed budget",
        f"d=0.1: model-pocbam {measured[0.1][0]:.3f} vs pocbam {measured[0.1][1]:.3f}, "
        f"gap {gap1:+.4f} needs >= +{2 * se1:.4f} ({'ok' if lead_ok else 'FAILED'}); "
        f"d=0.4: gap {gap4:+.4f} needs <= -{2 * se4:.4f} ({'ok' if trail_ok else 'FAILED'}); "
        f"mean index {ii1:.4f} needs < 0.17 ({'ok' if ii_low_ok else 'FAILED'}), "
        f"{ii4:.4f} needs > 0.17 ({'ok' if ii_high_ok else 'FAILED'}); 500 replications",
    )
    assert ok, (
        f"crossover clauses: lead at d=0.1 {lead_ok} (gap {gap1:+.4f}, 2SE {2 * se1:.4f}), "
        f"trail at d=0.4 {trail_ok} (gap {gap4:+.4f}, 2SE {2 * se4:.4f}), "
        f"index below gate {ii_low_ok} ({ii1:.4f}), above gate {ii_high_ok} ({ii4:.4f})"
    )


def test_topk_success_trend(announce):
    """Success-rate ordering on a transitive K=10 environment at N=1000.

    The bounds expect model-based > independent > uniform with every
    pairwise gap above twice the pooled standard error, and the tournament
    baseline below uniform at matched mean sample counts.  The ordering and
    the tournament clauses hold; the gap-width clause does not at 500
    replications (the model-based lead over the independent allocator is
    +0.004 here, far inside noise).  The test reports the measured gaps and
    fails honestly rather than widening the tolerance.
    """
    cfg = BenchmarkConfig(
        K=10,
        k=4,
        budget=1000,
        methods=[
            MethodSpec("ml-pocbam"),
            MethodSpec("pocbam"),
            MethodSpec("uniform"),
            MethodSpec("select-top", nu=10),
            MethodSpec("select-top", nu=20),
            MethodSpec("select-top", nu=35),
            MethodSpec("select-top", nu=50),
        ],
        environment=ThurstoneGenConfig(K=10),
        n_0=3,
        replications=500,
        base_seed=0,
    )
    res = run_benchmark(cfg)
    R = cfg.replications
    ml = _rates(res, "ml-pocbam")
    po = _rates(res, "pocbam")
    uni = _rates(res, "uniform")
    final = max(uni)
    rates = (ml[final].rate, po[final].rate, uni[final].rate)
    ordering_ok = rates[0] > rates[1] > rates[2]

    gaps = []
    for hi, lo in ((rates[0], rates[1]), (rates[1], rates[2]), (rates[0], rates[2])):
        bound = _pooled_2se(hi, lo, R)
        gaps.append((hi - lo, bound, hi - lo > bound))
    gaps_ok = all(g[2] for g in gaps)

    steps = sorted(uni)
    tournament = []
    for nu in (10, 20, 35, 50):
        row = next(r for r in res.success if r.method == f"select-top(nu={nu})")
        lo = max(s for s in steps if s <= row.mean_samples)
        hi = min(s for s in steps if s >= row.mean_samples)
        if hi == lo:
            matched = uni[lo].rate
        else:
            w = (row.mean_samples - lo) / (hi - lo)
            matched = (1 - w) * uni[lo].rate + w * uni[hi].rate
        tournament.append((nu, row.rate, row.mean_samples, matched, row.rate < matched))
    tournament_ok = all(t[4] for t in tournament)

    ok = ordering_ok and gaps_ok and tournament_ok
    announce(
        ok,
        "top-k success ordering at K=10",
        f"final rates model {rates[0]:.3f} > independent {rates[1]:.3f} > uniform "
        f"{rates[2]:.3f} ({'ok' if ordering_ok else 'FAILED'}); gaps vs 2x pooled SE: "
        + ", ".join(f"{g:+.4f} vs {b:.4f} ({'ok' if good else 'FAILED'})" for g, b, good in gaps)
        + "; tournament below uniform at matched counts: "
        + ", ".join(
            f"nu={nu} {rate:.3f}@{n:.0f} vs {m:.3f} ({'ok' if good else 'FAILED'})"
            for nu, rate, n, m, good in tournament
        )
        + f"; {R} replications",
    )
    assert ok, (
        f"ordering {ordering_ok} {rates}; gaps {[(round(g, 4), round(b, 4)) for g, b, _ in gaps]}; "
        f"tournament {[(nu, round(r, 3), round(m, 3)) for nu, r, _, m, _ in tournament]}"
    )


def test_hybrid_on_intransitive_environments(announce, tmp_path):
    envs = []
    seed = 1000
    while len(envs) < 5:
        env = generate_thurstone(ThurstoneGenConfig(K=10, d=0.5), seed=[seed])
        if intransitive_triples(env) > 0:
            path = tmp_path / f"intransitive_{len(envs)}.csv"
            save_matrix_env(env, path)
            envs.append((seed, path))
        seed += 1

    results = []
    for seed, path in envs:
        cfg = BenchmarkConfig(
            K=10,
            k=4,
            budget=500,
            methods=[MethodSpec("hybrid"), MethodSpec("pocbam")],
            environment=str(path),
            n_0=3,
            replications=200,
            base_seed=0,
            checkpoints=[500],
        )
        res = run_benchmark(cfg)
        hy = _rates(res, "hybrid")[500].rate
        po = _rates(res, "pocbam")[500].rate
        floor = po - math.sqrt(po * (1 - po) / 200)
        results.append((seed, hy, po, floor, hy >= floor))

    ok = all(r[4] for r in results)
    announce(
        ok,
        "hybrid safety on intransitive environments",
        "; ".join(
            f"seed {seed}: hybrid {hy:.3f} vs floor {floor:.3f} ({'ok' if good else 'FAILED'})"
            for seed, hy, po, floor, good in results
        )
        + " (floor = independent-allocator rate minus one standard error, 200 replications)",
    )
    assert ok, f"hybrid fell below floor: {results}"


def test_large_scale_smoke(announce):
    cfg = BenchmarkConfig(
        K=100,
        k=40,
        budget=30000,
        methods=[MethodSpec("ml-pocbam", refit_every=20), MethodSpec("uniform")],
        environment=ThurstoneGenConfig(K=100),
        n_0=3,
        replications=100,
        base_seed=0,
        checkpoints=[30000],
    )
    t0 = time.monotonic()
    res = run_benchmark(cfg)
    elapsed = time.monotonic() - t0
    ml = _rates(res, "ml-pocbam")[30000].rate
    uni = _rates(res, "uniform")[30000].rate
    ok = ml > uni
    announce(
        ok,
        "large-scale smoke (top 40 of 100)",
        f"model-based {ml:.3f} vs uniform {uni:.3f} at 30000 samples, "
        f"100 replications, {elapsed / 60:.1f} min",
    )
    assert ok, f"expected model-based ({ml:.3f}) above uniform ({uni:.3f})"
