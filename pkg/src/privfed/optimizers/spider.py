"""Path-integrated variance-reduced federated optimization (SPIDER family).

The estimator h_r is refreshed from a noisy (mini)batch gradient every q
rounds and accumulates noisy gradient differences in between; the difference
noise scales with the realized step norm, capped by a hard ceiling.  Includes
the shuffle-summation variant and the two-step-per-round alternate form used
in the experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import GAUSSIAN, NONE, SHUFFLE, PrivacyBudget, RunConfig, RunResult
from ..privacy import plan_noise
from ..prox import prox
from ..shuffle import analyze_counts, choose_params, randomize_matrix
from . import messages
from .common import Trajectory, aggregate, effective_loss, gaussian_noise, initial_point

__all__ = ["run_isrl_spider", "run_sdp_spider", "run_isrl_spider_alt",
           "auto_config_spider", "SpiderDiagnostics", "diff_noise_variance"]

_AUTO_CLAMP = 10 ** 6


@dataclass
class SpiderDiagnostics:
    """Per-round estimator-quality trace plus the theoretical variance
    constants; rows are (round, is_anchor, err_sq, step_sq, phase_start,
    noise_var)."""

    tau1_sq: float
    tau2_sq: float
    rows: list = field(default_factory=list)

    def add(self, round_: int, is_anchor: bool, err_sq: float, step_sq: float,
            phase_start: int, noise_var: float):
        self.rows.append((round_, is_anchor, err_sq, step_sq, phase_start,
                          noise_var))


def auto_config_spider(*, eps: float, delta: float, n: int, d: int, L: float,
                       beta: float, M: int, delta_hat: float,
                       m_lt_n: bool) -> tuple:
    """(R, q) from the analysis, clamped to [1, 10^6]; q < 1 means the
    fallback "output w0" applies and (0, 0) is returned."""
    ln1d = math.log(1.0 / delta)
    q_cap = (n * M) if m_lt_n else math.inf
    q_raw = (eps * n * L * math.sqrt(M)
             / math.sqrt(d * ln1d * delta_hat * beta)) ** (2.0 / 3.0)
    q = math.floor(min(q_raw, q_cap))
    if q < 1:
        return 0, 0
    q = min(q, _AUTO_CLAMP)
    r_raw = (eps * n * math.sqrt(M * q) * math.sqrt(delta_hat * beta)
             / (L * math.sqrt(d * ln1d)))
    R = min(max(1, math.ceil(r_raw)), _AUTO_CLAMP)
    return R, q


def diff_noise_variance(plan, step_norm: float) -> float:
    """Per-message noise variance of a difference round:
    min(sigma2_slope * step_norm^2, sigma2_cap); the disabled-slope path
    (sigma2 = inf) always pays the cap."""
    cap = plan.sigma2_sq_cap or 0.0
    slope = plan.sigma2_sq_slope
    if slope is None or not math.isfinite(slope):
        return cap
    return min(slope * step_norm ** 2, cap)


def _spider_taus(plan, M: int, N: int, n: int, d: float, L: float,
                 beta: float) -> tuple:
    """tau1^2, tau2^2 of the estimator-variance lemma for this plan."""
    part = 1.0 if M < N else 0.0
    sigma1_sq = plan.sigma1_sq or 0.0
    slope = plan.sigma2_sq_slope
    if slope is None or not math.isfinite(slope):
        slope = 0.0 if plan.mechanism == NONE else math.inf
    tau1_sq = 2.0 * L ** 2 * part / (M * n) + d * sigma1_sq / M
    tau2_sq = 8.0 * (beta ** 2 * part / (M * n) + d * slope / M)
    return tau1_sq, tau2_sq


def _maybe_autoconfig(problem, config: RunConfig, loss):
    if not config.auto_config:
        return config, False
    if config.delta_hat is None:
        raise ValueError("auto_config requires delta_hat (a bound on F(w0) - F*)")
    ds = problem.dataset
    N = ds.n_silos
    M = config.availability.min_m(N)
    if config.mechanism == NONE:
        raise ValueError("auto_config applies to the private variants")
    R, q = auto_config_spider(
        eps=config.privacy.epsilon, delta=config.privacy.delta,
        n=ds.records_per_silo, d=ds.n_features, L=loss.lipschitz_L,
        beta=loss.smooth_beta, M=M, delta_hat=config.delta_hat,
        m_lt_n=M < N)
    if q == 0:
        return config, True  # fallback: output w0
    return config.with_updates(rounds=R, q=q, auto_config=False), False


def _fallback_result(problem, config, loss, algorithm) -> RunResult:
    plan = plan_noise(algorithm, config, n=problem.dataset.records_per_silo,
                      d=problem.dataset.n_features, L=loss.lipschitz_L,
                      beta=loss.smooth_beta, n_silos=problem.dataset.n_silos)
    beta = loss.smooth_beta
    traj = Trajectory(problem=problem, loss=loss, config=config, plan=plan,
                      algo_tag=algorithm, eta_metric=1.0 / (2.0 * beta),
                      total_rounds=1)
    w0 = initial_point(problem, config)
    traj.record(w0, is_candidate=False)
    result = traj.finish(w0)
    result.w_priv = w0
    result.w_priv_index = 0
    return result


def _run_spider(problem, config: RunConfig, algorithm: str,
                params_override=None) -> RunResult:
    loss = effective_loss(problem, config)
    config, fallback = _maybe_autoconfig(problem, config, loss)
    if fallback:
        return _fallback_result(problem, config, loss, algorithm)

    ds = problem.dataset
    N, n, d = ds.n_silos, ds.records_per_silo, ds.n_features
    beta = loss.smooth_beta
    plan = plan_noise(algorithm, config, n=n, d=d, L=loss.lipschitz_L,
                      beta=beta, n_silos=N)
    R, q = plan.inputs["R"], plan.inputs["q"]
    K1, K2 = plan.inputs["K1"], plan.inputs["K2"]
    eta = config.eta if config.eta is not None else 1.0 / (2.0 * beta)
    shuffle_mode = plan.mechanism == SHUFFLE

    n_anchor = math.ceil(R / q)
    n_diff = R - n_anchor
    if plan.mechanism == GAUSSIAN:
        rho_anchor = plan.rho_budget / n_anchor if n_diff == 0 \
            else plan.rho_budget / (2.0 * n_anchor)
        rho_diff = 0.0 if n_diff == 0 else plan.rho_budget / (2.0 * n_diff)

    traj = Trajectory(problem=problem, loss=loss, config=config, plan=plan,
                      algo_tag=algorithm, eta_metric=eta, total_rounds=R)
    diagnostics = None
    if config.diagnostics:
        M = config.availability.min_m(N)
        tau1_sq, tau2_sq = _spider_taus(plan, M, N, n, d, loss.lipschitz_L, beta)
        diagnostics = SpiderDiagnostics(tau1_sq=tau1_sq, tau2_sq=tau2_sq)

    w = initial_point(problem, config)
    traj.record(w, is_candidate=False)
    w_prev = None
    h = None

    for r in range(R):
        silos = traj.availability(r)
        is_anchor = (r % q == 0)
        step_norm = 0.0 if w_prev is None else float(np.linalg.norm(w - w_prev))

        if is_anchor:
            noise_var = plan.sigma1_sq or 0.0
            if shuffle_mode:
                h = _shuffle_round(traj, loss, ds, silos, w, None, K1,
                                   plan.shuffle_budgets["full"], r,
                                   params_override)
            else:
                msgs = []
                for i in silos:
                    feats, labels = ds.silo(i)
                    idx = _spider_batch(traj, r, i, n, K1)
                    g = messages.sgd_message(loss, w, feats, labels, idx)
                    msgs.append(g + gaussian_noise(traj, r, i, noise_var, d))
                h = aggregate(msgs)
                traj.add_cost(grad_evals=len(silos) * K1)
                if plan.mechanism == GAUSSIAN:
                    traj.charge(rho_anchor)
        else:
            noise_var = diff_noise_variance(plan, step_norm)
            if shuffle_mode:
                rng_range = min(2.0 * loss.lipschitz_L, beta * step_norm)
                eps_b, delta_b, _ = plan.shuffle_budgets["diff"]
                H = _shuffle_round(traj, loss, ds, silos, w, w_prev, K2,
                                   (eps_b, delta_b, rng_range), r,
                                   params_override)
            else:
                msgs = []
                for i in silos:
                    feats, labels = ds.silo(i)
                    idx = _spider_batch(traj, r, i, n, K2)
                    g = messages.diff_message(loss, w, w_prev, feats, labels, idx)
                    msgs.append(g + gaussian_noise(traj, r, i, noise_var, d))
                H = aggregate(msgs)
                traj.add_cost(grad_evals=2 * len(silos) * K2)
                if plan.mechanism == GAUSSIAN:
                    traj.charge(rho_diff)
            h = h + H

        if diagnostics is not None:
            target = loss.full_clipped_grad(w, ds)
            err = h - target
            diagnostics.add(r, is_anchor, float(err @ err), step_norm ** 2,
                            (r // q) * q, noise_var)

        w_prev = w
        w = prox(loss.f1, eta, w - eta * h)
        traj.record(w, is_candidate=True)

    return traj.finish(w, diagnostics=diagnostics)


def _spider_batch(traj, round_key, silo, n, K):
    """Full local set when K == n (the proofs' "full batch"), otherwise K
    uniform with-replacement draws."""
    if K == n:
        return np.arange(n)
    return traj.noise_stream(round_key, silo, "batch").integers(0, n, size=K)


def _shuffle_round(traj, loss, ds, silos, w, w_prev, K, budget, round_key,
                   params_override):
    """One P_vec aggregation over per-sample clipped gradients (w_prev=None)
    or clipped gradient differences."""
    eps_b, delta_b, rng_range = budget
    n = ds.records_per_silo
    d = ds.n_features
    stacks = []
    for i in silos:
        feats, labels = ds.silo(i)
        idx = _spider_batch(traj, round_key, i, n, K)
        if w_prev is None:
            stacks.append(messages.per_sample_clipped(loss, w, feats, labels, idx))
        else:
            stacks.append(messages.per_sample_clipped_diff(loss, w, w_prev,
                                                           feats, labels, idx))
    stack = np.concatenate(stacks, axis=0)
    grad_cost = stack.shape[0] * (2 if w_prev is not None else 1)
    if rng_range <= 0.0:
        # zero step: every message is exactly zero, nothing to randomize
        traj.add_cost(grad_evals=grad_cost)
        return np.zeros(d)
    params = params_override or choose_params(
        PrivacyBudget(eps_b, delta_b), stack.shape[0], d, rng_range)
    counts = randomize_matrix(stack, rng_range, params,
                              traj.noise_stream(round_key, 0, "protocol"))
    est = analyze_counts(counts, params, stack.shape[0], rng_range)
    traj.add_cost(grad_evals=grad_cost, protocol_scalars=stack.shape[0] * d)
    return est / stack.shape[0]


def run_isrl_spider(problem, config: RunConfig) -> RunResult:
    if config.mechanism == SHUFFLE:
        raise ValueError("use run_sdp_spider for the shuffle mechanism")
    return _run_spider(problem, config, "isrl_spider")


def run_sdp_spider(problem, config: RunConfig, params_override=None) -> RunResult:
    if config.mechanism != SHUFFLE:
        raise ValueError("run_sdp_spider requires mechanism='shuffle'")
    return _run_spider(problem, config, "sdp_spider",
                       params_override=params_override)


def run_isrl_spider_alt(problem, config: RunConfig) -> RunResult:
    """Two-step-per-round alternate form: each round first applies the
    carried estimate, then a difference-corrected step, then refreshes the
    estimate from a fresh batch."""
    if config.mechanism == SHUFFLE:
        raise ValueError("the alternate form has no shuffle variant")
    loss = effective_loss(problem, config)
    ds = problem.dataset
    N, n, d = ds.n_silos, ds.records_per_silo, ds.n_features
    beta = loss.smooth_beta
    plan = plan_noise("isrl_spider_alt", config, n=n, d=d, L=loss.lipschitz_L,
                      beta=beta, n_silos=N)
    E = plan.inputs["R"]
    K1, K2 = plan.inputs["K1"], plan.inputs["K2"]
    eta = config.eta if config.eta is not None else 1.0 / (2.0 * beta)
    sigma1_sq = plan.sigma1_sq or 0.0  # difference messages
    sigma2_sq = plan.sigma2_sq or 0.0  # full-gradient messages
    n_messages = 2 * (E - 1) + 1 if E > 1 else 1
    rho_msg = plan.rho_budget / n_messages if plan.mechanism == GAUSSIAN else 0.0

    traj = Trajectory(problem=problem, loss=loss, config=config, plan=plan,
                      algo_tag="isrl_spider_alt", eta_metric=eta,
                      total_rounds=max(E - 1, 1))
    w2 = initial_point(problem, config)
    traj.record(w2, is_candidate=False)

    silos = traj.availability(("init",))
    msgs = []
    for i in silos:
        feats, labels = ds.silo(i)
        idx = _spider_batch(traj, ("init",), i, n, K2)
        g = messages.sgd_message(loss, w2, feats, labels, idx)
        msgs.append(g + gaussian_noise(traj, ("init",), i, sigma2_sq, d, "full_noise"))
    v2 = aggregate(msgs)
    traj.add_cost(grad_evals=len(silos) * K2)
    if plan.mechanism == GAUSSIAN:
        traj.charge(rho_msg)

    for r in range(E - 1):
        silos = traj.availability(r + 1)
        w0_ = w2
        w1 = prox(loss.f1, eta, w0_ - eta * v2)
        msgs = []
        for i in silos:
            feats, labels = ds.silo(i)
            idx = _spider_batch(traj, (r + 1, "diff"), i, n, K1)
            g = messages.diff_message(loss, w1, w0_, feats, labels, idx)
            msgs.append(g + v2 + gaussian_noise(traj, (r + 1, "diff"), i,
                                                sigma1_sq, d, "diff_noise"))
        v1 = aggregate(msgs)
        traj.add_cost(grad_evals=2 * len(silos) * K1)
        if plan.mechanism == GAUSSIAN:
            traj.charge(rho_msg)
        w2 = prox(loss.f1, eta, w1 - eta * v1)

        msgs = []
        for i in silos:
            feats, labels = ds.silo(i)
            idx = _spider_batch(traj, (r + 1, "full"), i, n, K2)
            g = messages.sgd_message(loss, w2, feats, labels, idx)
            msgs.append(g + gaussian_noise(traj, (r + 1, "full"), i,
                                           sigma2_sq, d, "full_noise"))
        v2 = aggregate(msgs)
        traj.add_cost(grad_evals=len(silos) * K2)
        if plan.mechanism == GAUSSIAN:
            traj.charge(rho_msg)

        traj.candidates.append(w1.copy())
        traj.record(w2, is_candidate=True)

    return traj.finish(w2)
