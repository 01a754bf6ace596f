"""Acceptance suite: every criterion runs at its stated tolerance and prints
one pass/fail line (run with `pytest -s tests/test_acceptance.py` to see them
live)."""

import itertools
import math
import time

import numpy as np
import pytest

from oracles import prox_argmin_oracle
from privfed.core import PrivacyBudget, Regularizer, RunConfig
from privfed.harness import adjacency_probe, run_experiment
from privfed.optimizers import run
from privfed.privacy import (advanced_composition, gaussian_sigma_sq,
                             plan_noise, zcdp_to_dp)
from privfed.problems import make_quadratic
from privfed.prox import prox
from privfed.report import final_metric_medians, load_results
from privfed.rng import derive_rng
from privfed.shuffle import (choose_params, estimator_variance_bound,
                             randomize_matrix)

_RESULTS = []


def _report(num, name, ok, detail=""):
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {name}" + \
           (f" ({detail})" if detail else "")
    _RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def quad_acc():
    # N=5, n=50, d=10, kappa = 10
    return make_quadratic(N=5, n=50, d=10, mu=1.0, beta=10.0,
                          hetero_scale=1.0, seed=42)


def test_criterion_1_prox_correctness(quad_acc):
    started = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(500):
        d = int(rng.integers(1, 11))
        z = rng.normal(0, 2, d)
        eta = float(rng.uniform(0.05, 2.0))
        variant = i % 3  # cycle L1, Ball, L1PlusBall
        lam = float(rng.uniform(0.01, 2.0)) if variant in (0, 2) else 0.0
        radius = float(rng.uniform(0.3, 3.0)) if variant in (1, 2) else np.inf
        closed = prox(Regularizer(lam=lam, radius=radius), eta, z)
        numeric = prox_argmin_oracle(z, eta, lam, radius)
        worst = max(worst, float(np.linalg.norm(closed - numeric)))
    nonexp_ok = True
    regs = [Regularizer.l1(0.8), Regularizer.ball(1.5),
            Regularizer.l1_ball(0.8, 1.5), Regularizer.zero()]
    for i in range(1000):
        d = int(rng.integers(1, 9))
        a, b = rng.normal(0, 3, d), rng.normal(0, 3, d)
        eta = float(rng.uniform(0.05, 2.0))
        reg = regs[i % 4]
        if np.linalg.norm(prox(reg, eta, a) - prox(reg, eta, b)) > \
                np.linalg.norm(a - b) * (1 + 1e-12):
            nonexp_ok = False
    elapsed = time.perf_counter() - started
    _report(1, "prox matches numeric argmin and is non-expansive",
            worst < 1e-6 and nonexp_ok and elapsed < 10.0,
            f"worst dev {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_contraction(quad_acc):
    started = time.perf_counter()
    res = run("isrl_prox_sgd", quad_acc,
              RunConfig(rounds=200, mechanism="none", record_iterates=True))
    A = quad_acc.aux["A"]
    wstar = quad_acc.known.minimizer
    mu, beta = quad_acc.known.mu, quad_acc.known.beta
    excess = [0.5 * float((w - wstar) @ A @ (w - wstar)) for w in res.iterates]
    bound = (1 - mu / (2 * beta)) + 1e-9
    ratios_ok = all(b <= a * bound for a, b in zip(excess, excess[1:])
                    if a > 1e-300)
    final_ok = res.records[-1].excess_risk < 1e-8
    elapsed = time.perf_counter() - started
    _report(2, "noiseless Prox-SGD contracts at (1 - mu/2beta) per round",
            ratios_ok and final_ok and elapsed < 5.0,
            f"final excess {res.records[-1].excess_risk:.2e}, {elapsed:.1f}s")


def _shuffle_trials(eps, d, n_contrib, L, delta, trials, seed, chunk=400):
    """Vectorized Monte Carlo over protocol executions; distribution-identical
    to per-message randomize/analyze (one Bernoulli + one Binomial per
    contributor per coordinate)."""
    params = choose_params(PrivacyBudget(eps, delta), n_contrib, d, L)
    st = derive_rng(seed, "accept3", purpose=f"{eps}|{d}|{n_contrib}")
    X = st.normal((n_contrib, d), scale=0.2 * L)
    X = X * np.minimum(1.0, 0.99 * L / np.linalg.norm(X, axis=1))[:, None]
    truth = X.sum(axis=0)
    ests = np.empty((trials, d))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        counts = randomize_matrix(np.tile(X, (m, 1)), L, params, st)
        col = counts.reshape(m, n_contrib, d).sum(axis=1)
        ests[done:done + m] = ((2.0 * L / params.g)
                               * (col - params.p * params.b * n_contrib)
                               - n_contrib * L)
        done += m
    return params, truth, ests


def test_criterion_3_shuffle_protocol():
    started = time.perf_counter()
    configs = [(0.5, 1, 20), (0.5, 10, 200), (1.0, 1, 200), (1.0, 10, 20),
               (5.0, 1, 20), (5.0, 10, 200)]
    L, delta, trials = 1.0, 1e-3, 10_000
    ok = True
    details = []
    var_allow = 1.0 + 4.0 * math.sqrt(2.0 / trials)  # one-sided sampling slack
    for eps, d, n_contrib in configs:
        params, truth, ests = _shuffle_trials(eps, d, n_contrib, L, delta,
                                              trials, seed=0)
        se = ests.std(axis=0, ddof=1) / math.sqrt(trials)
        bias_ok = bool(np.all(np.abs(ests.mean(axis=0) - truth) <= 4 * se))
        bound = estimator_variance_bound(params, n_contrib, L)
        var_ok = bool(np.all(ests.var(axis=0, ddof=1) <= bound * var_allow))
        # stability of the recorded constant across 5 seeds
        scale = d * L ** 2 * math.log(d / delta) ** 2 / eps ** 2
        cs = []
        for seed in range(5):
            _, _, e2 = _shuffle_trials(eps, d, n_contrib, L, delta, 2000, seed)
            cs.append(e2.var(axis=0, ddof=1).sum() / scale)
        c_mean = float(np.mean(cs))
        c_ok = max(cs) <= 1.2 * c_mean and min(cs) >= 0.8 * c_mean
        ok = ok and bias_ok and var_ok and c_ok
        details.append(f"eps={eps},d={d},N={n_contrib}: C={c_mean:.0f}")
    elapsed = time.perf_counter() - started
    _report(3, "shuffle summation unbiased with bounded, stable variance",
            ok and elapsed < 60.0, "; ".join(details) + f"; {elapsed:.1f}s")


def test_criterion_4_sensitivity(quad_acc):
    started = time.perf_counter()
    algorithms = ["isrl_prox_sgd", "isrl_prox_svrg", "isrl_prox_pl_svrg",
                  "isrl_spider", "isrl_spider_alt", "isrl_mb_sgd",
                  "isrl_local_sgd", "sdp_prox_sgd", "sdp_prox_svrg",
                  "sdp_spider"]
    cfg = RunConfig(rounds=5, k=10, k1=25, k2=25, mechanism="none")
    all_ok = True
    worst_ratio = None
    for alg in algorithms:
        report = adjacency_probe(alg, quad_acc, swaps=100, seed=0, config=cfg)
        all_ok = all_ok and report.ok()
        if report.worst_case is not None:
            worst_ratio = report.worst_case["ratio"]
    constructed_ok = worst_ratio is not None and worst_ratio >= 0.99
    elapsed = time.perf_counter() - started
    _report(4, "pre-noise message differences within declared sensitivities",
            all_ok and constructed_ok and elapsed < 30.0,
            f"constructed sgd_batch worst case ratio {worst_ratio:.4f}, "
            f"{elapsed:.1f}s")


def test_criterion_5_spider_martingale(quad_acc):
    started = time.perf_counter()
    R, q = 12, 4
    runs = [run("isrl_spider", quad_acc,
                RunConfig(rounds=R, q=q, privacy=PrivacyBudget(2.0, 1e-4),
                          seed=s, diagnostics=True))
            for s in range(200)]
    tau1 = runs[0].diagnostics.tau1_sq
    tau2 = runs[0].diagnostics.tau2_sq
    err = np.array([[r.diagnostics.rows[t][2] for t in range(R)] for r in runs])
    step = np.array([[r.diagnostics.rows[t][3] for t in range(R)] for r in runs])
    worst = 0.0
    for t in range(R):
        s_r = (t // q) * q
        rhs = tau2 * step[:, s_r + 1:t + 1].sum(axis=1).mean() + tau1
        worst = max(worst, err[:, t].mean() / rhs)
    elapsed = time.perf_counter() - started
    _report(5, "estimator error within the variance bound at every round",
            worst <= 1.2 and elapsed < 120.0,
            f"worst lhs/rhs {worst:.3f} over 200 runs, {elapsed:.1f}s")


def test_criterion_6_sampling_variance_lemma():
    rng = np.random.default_rng(3)
    a = rng.normal(0, 1, (4, 3))
    a -= a.mean(axis=0)
    subsets = list(itertools.combinations(range(4), 2))
    second_moment = np.mean([np.sum(a[list(s)].mean(axis=0) ** 2)
                             for s in subsets])
    expect = (4 - 2) / ((4 - 1) * 2) * np.mean(np.sum(a ** 2, axis=1))
    exact_ok = abs(second_moment - expect) <= 1e-14 * max(1.0, expect)

    b = rng.normal(0, 1, (25, 4))
    b -= b.mean(axis=0)
    trials = 30_000
    vals = np.empty(trials)
    for t in range(trials):
        s = rng.choice(25, size=12, replace=False)
        vals[t] = np.sum(b[s].mean(axis=0) ** 2)
    expect_mc = (25 - 12) / ((25 - 1) * 12) * np.mean(np.sum(b ** 2, axis=1))
    se = vals.std(ddof=1) / math.sqrt(trials)
    mc_ok = abs(vals.mean() - expect_mc) <= 3 * se
    _report(6, "subset-mean variance identity exact and Monte-Carlo confirmed",
            exact_ok and mc_ok,
            f"exact dev {abs(second_moment - expect):.1e}, "
            f"MC dev {abs(vals.mean() - expect_mc) / se:.2f} SE")


def test_criterion_7_accountant_exactness(quad_acc):
    frozen = [
        (gaussian_sigma_sq(0.2, PrivacyBudget(1.0, 0.01)), 0.7368272297580947),
        (zcdp_to_dp(0.125, math.exp(-1.0)), 0.8321067811865476),
        (advanced_composition(0.1, 1e-8, 100, 1e-6)[0], 6.308230947268184),
    ]
    cfg = RunConfig(rounds=10, privacy=PrivacyBudget(1.0, 0.01))
    plan = plan_noise("isrl_prox_sgd", cfg, n=200, d=3, L=1.0, beta=1.0)
    frozen.append((plan.sigma_sq, 0.09210340371976184))
    formulas_ok = all(abs(got / expect - 1.0) < 1e-6 for got, expect in frozen)

    runs_ok = True
    details = []
    budget = PrivacyBudget(1.5, 1e-4)
    cases = [
        ("isrl_prox_sgd", {"rounds": 5}),
        ("isrl_prox_svrg", {"epochs": 2, "k": 25}),
        ("isrl_prox_pl_svrg", {"epochs": 1, "k": 25, "restarts": 2}),
        ("isrl_spider", {"rounds": 6, "q": 2}),
        ("isrl_spider_alt", {"rounds": 4}),
        ("isrl_mb_sgd", {"rounds": 5}),
        ("isrl_local_sgd", {"rounds": 3, "local_steps": 2, "k": 10}),
    ]
    for alg, extra in cases:
        res = run(alg, quad_acc, RunConfig(privacy=budget, seed=1, **extra))
        spent = res.records[-1].epsilon_spent
        runs_ok = runs_ok and spent <= budget.epsilon + 1e-12
        details.append(f"{alg}:{spent:.3f}")
    _report(7, "worked accountant values to 6 digits; every ISRL run within budget",
            formulas_ok and runs_ok, "spent " + ",".join(details))


def test_criterion_8_privacy_utility_trend(tmp_path):
    started = time.perf_counter()
    q_labels = [f"spider_q{q}" for q in (1, 2, 4, 8)]
    spec = {
        "schema_version": 1,
        "problem": {"generator": "logistic",
                    "params": {"N": 10, "n": 500, "d": 20,
                               "label_by_silo": True, "radius": 3.0,
                               "seed": 123, "margin": 2.0}},
        "algorithms": ([{"name": "isrl_spider", "label": f"spider_q{q}",
                         "overrides": {"q": q}} for q in (1, 2, 4, 8)]
                       + ["isrl_mb_sgd"]),
        "epsilon_grid": [0.75, 1.0, 1.5, 3.0, 6.0, 12.0, 18.0],
        "delta": {"rule": "one_over_n_sq"},
        "repeats": 1,
        "seeds": list(range(10)),
        "run": {"rounds": 80},
    }
    out = tmp_path / "trend.csv"
    summary = run_experiment(spec, out)
    assert summary.n_infeasible == 0
    # the 7-point grid times |algorithms| times seeds*repeats run groups
    assert summary.n_cells == 7 * 5 * 10
    medians = final_metric_medians(load_results(out))
    grid = spec["epsilon_grid"]
    tuned = [min(medians[(lbl, eps)] for lbl in q_labels) for eps in grid]
    mb = [medians[("isrl_mb_sgd", eps)] for eps in grid]
    monotone = all(b <= a for a, b in zip(tuned, tuned[1:]))
    dominates = all(t <= m + 1e-15 for t, m in zip(tuned, mb))
    elapsed = time.perf_counter() - started
    _report(8, "tuned-q path-integrated estimator non-increasing in eps and "
               "never worse than MB-SGD",
            monotone and dominates and elapsed < 600.0,
            f"tuned {['%.4g' % v for v in tuned]}, {elapsed:.0f}s")


def test_criterion_9_determinism(tmp_path):
    spec = {
        "schema_version": 1,
        "problem": {"generator": "quadratic",
                    "params": {"N": 3, "n": 30, "d": 4, "mu": 1.0,
                               "beta": 5.0, "hetero_scale": 1.0, "seed": 6}},
        "algorithms": ["isrl_spider", "isrl_prox_sgd"],
        "epsilon_grid": [1.0],
        "delta": {"rule": "one_over_n_sq"},
        "repeats": 1,
        "seeds": [7],
        "run": {"rounds": 5, "q": 2},
    }
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(spec, a)
    run_experiment(spec, b)
    identical = a.read_bytes() == b.read_bytes()
    _report(9, "rerunning a cell with the same seed is byte-identical",
            identical, f"{len(a.read_bytes())} bytes compared")


def test_zz_summary():
    print()
    for line in _RESULTS:
        print(line)
    assert len(_RESULTS) == 9
