"""Variance-reduced proximal optimization with epoch anchors, in the
record-level Gaussian and shuffle variants, plus the restarted form for
proximal-PL losses.

Per epoch, silos compute a noisy anchor gradient over their whole local set;
each of the Q inner steps then sends the anchored variance-reduced estimator
(with-replacement batch of K) and the server takes a prox step.  The
restarted wrapper chains S such calls, each started at the previous output.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import GAUSSIAN, SHUFFLE, PrivacyBudget, RunConfig, RunResult
from ..privacy import plan_noise
from ..prox import prox
from ..shuffle import analyze_counts, choose_params, randomize_matrix
from . import messages
from .common import Trajectory, aggregate, effective_loss, gaussian_noise, initial_point

__all__ = ["run_isrl_prox_svrg", "run_isrl_prox_pl_svrg",
           "run_sdp_prox_svrg", "run_sdp_prox_pl_svrg", "svrg_default_eta"]


def svrg_default_eta(beta: float, K: int, M: int, n: int) -> float:
    """Step size (1/8*beta) * min(1, K^{3/2} sqrt(M) / n) from the analysis."""
    return (1.0 / (8.0 * beta)) * min(1.0, K ** 1.5 * math.sqrt(M) / n)


def _resolve_eta(config, loss, K, M, n) -> float:
    if config.eta is not None:
        return config.eta
    return svrg_default_eta(loss.smooth_beta, K, M, n)


def _svrg_epochs(problem, config, algorithm, traj, w0, restart, plan,
                 params_override=None):
    """One SVRG call: E epochs of Q inner rounds starting from w0.

    Returns the final iterate; inner iterates are appended to
    traj.candidates by the per-round record() calls.
    """
    loss, ds = traj.loss, problem.dataset
    n, d = ds.records_per_silo, ds.n_features
    E, K, Q = plan.inputs["E"], plan.batch_size, plan.epoch_length
    shuffle_mode = plan.mechanism == SHUFFLE
    eta = traj.eta_metric

    w = w0.copy()
    wbar = w0.copy()
    for r in range(E):
        silos = traj.availability((restart, r))
        anchors = {}
        if shuffle_mode:
            eps_a, delta_a, range_a = plan.shuffle_budgets["anchor"]
            stacks = [messages.per_sample_clipped(loss, wbar, *ds.silo(i), np.arange(n))
                      for i in silos]
            stack = np.concatenate(stacks, axis=0)
            params = params_override or choose_params(
                PrivacyBudget(eps_a, delta_a), stack.shape[0], d, range_a)
            counts = randomize_matrix(stack, range_a, params,
                                      traj.noise_stream((restart, r), 0, "anchor_protocol"))
            anchor_agg = analyze_counts(counts, params, stack.shape[0], range_a) / stack.shape[0]
            traj.add_cost(grad_evals=stack.shape[0], protocol_scalars=stack.shape[0] * d)
        else:
            for i in silos:
                feats, labels = ds.silo(i)
                g = messages.sgd_message(loss, wbar, feats, labels, np.arange(n))
                anchors[i] = g + gaussian_noise(traj, (restart, r), i,
                                                plan.sigma1_sq, d, "anchor_noise")
            traj.add_cost(grad_evals=len(silos) * n)
            if plan.mechanism == GAUSSIAN:
                # anchor stream holds half the budget, split over S*E anchors
                traj.charge(plan.rho_budget / (2.0 * plan.inputs["S"] * E))

        for t in range(Q):
            if shuffle_mode:
                eps_i, delta_i, range_i = plan.shuffle_budgets["inner"]
                stacks = []
                for i in silos:
                    feats, labels = ds.silo(i)
                    idx = traj.noise_stream((restart, r, t), i, "batch").integers(0, n, size=K)
                    stacks.append(messages.per_sample_clipped_diff(
                        loss, w, wbar, feats, labels, idx))
                stack = np.concatenate(stacks, axis=0)
                params = params_override or choose_params(
                    PrivacyBudget(eps_i, delta_i), stack.shape[0], d, range_i)
                counts = randomize_matrix(stack, range_i, params,
                                          traj.noise_stream((restart, r, t), 0, "inner_protocol"))
                diff_agg = analyze_counts(counts, params, stack.shape[0], range_i) / stack.shape[0]
                vbar = diff_agg + anchor_agg
                traj.add_cost(grad_evals=2 * stack.shape[0],
                              protocol_scalars=stack.shape[0] * d)
            else:
                msgs = []
                for i in silos:
                    feats, labels = ds.silo(i)
                    idx = traj.noise_stream((restart, r, t), i, "batch").integers(0, n, size=K)
                    v = messages.diff_message(loss, w, wbar, feats, labels, idx)
                    v = v + anchors[i] + gaussian_noise(traj, (restart, r, t), i,
                                                        plan.sigma2_sq, d, "inner_noise")
                    msgs.append(v)
                vbar = aggregate(msgs)
                traj.add_cost(grad_evals=2 * len(silos) * K)
                if plan.mechanism == GAUSSIAN:
                    traj.charge(plan.rho_budget / (2.0 * plan.inputs["S"] * E * Q))

            w = prox(loss.f1, eta, w - eta * vbar)
            traj.record(w, is_candidate=True)
        wbar = w.copy()
    return w


def _run_svrg(problem, config: RunConfig, algorithm: str, w0=None,
              params_override=None) -> RunResult:
    loss = effective_loss(problem, config)
    ds = problem.dataset
    N, n, d = ds.n_silos, ds.records_per_silo, ds.n_features
    restarted = algorithm.endswith("pl_svrg")
    S = config.restarts if restarted else 1
    plan = plan_noise(algorithm, config, n=n, d=d, L=loss.lipschitz_L,
                      beta=loss.smooth_beta, n_silos=N)
    K, Q, E = plan.batch_size, plan.epoch_length, plan.inputs["E"]
    M = config.availability.min_m(N)
    eta = _resolve_eta(config, loss, K, M, n)

    # restarted and plain runs share a derivation tag, so S=1 restarted
    # trajectories are bit-identical to a single plain call
    traj = Trajectory(problem=problem, loss=loss, config=config, plan=plan,
                      algo_tag=algorithm.replace("_pl_", "_"), eta_metric=eta,
                      total_rounds=S * E * Q)
    w = initial_point(problem, config) if w0 is None else np.asarray(w0, dtype=float).copy()
    traj.record(w, is_candidate=False)

    for s in range(S):
        w = _svrg_epochs(problem, config, algorithm, traj, w, s, plan,
                         params_override=params_override)

    if restarted:
        # the restarted algorithm outputs the last restart's final iterate
        result = traj.finish(w)
        result.w_priv = w
        result.w_priv_index = len(result.records) - 1
        return result
    # plain SVRG outputs a uniform draw over all E*Q inner iterates
    return traj.finish(w)


def run_isrl_prox_svrg(problem, w0, config: RunConfig) -> RunResult:
    if config.mechanism == SHUFFLE:
        raise ValueError("use run_sdp_prox_svrg for the shuffle mechanism")
    return _run_svrg(problem, config, "isrl_prox_svrg", w0=w0)


def run_isrl_prox_pl_svrg(problem, config: RunConfig) -> RunResult:
    if config.mechanism == SHUFFLE:
        raise ValueError("use run_sdp_prox_pl_svrg for the shuffle mechanism")
    return _run_svrg(problem, config, "isrl_prox_pl_svrg")


def run_sdp_prox_svrg(problem, config: RunConfig, w0=None,
                      params_override=None) -> RunResult:
    if config.mechanism != SHUFFLE:
        raise ValueError("run_sdp_prox_svrg requires mechanism='shuffle'")
    return _run_svrg(problem, config, "sdp_prox_svrg", w0=w0,
                     params_override=params_override)


def run_sdp_prox_pl_svrg(problem, config: RunConfig, params_override=None) -> RunResult:
    if config.mechanism != SHUFFLE:
        raise ValueError("run_sdp_prox_pl_svrg requires mechanism='shuffle'")
    return _run_svrg(problem, config, "sdp_prox_pl_svrg",
                     params_override=params_override)
