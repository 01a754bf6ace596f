"""Noisy distributed proximal SGD, in the record-level Gaussian and
shuffle-summation variants.

Each round, available silos send the clipped mean gradient of a fresh
without-replacement batch (disjoint across rounds, so rounds compose in
parallel); the server averages and takes the prox step with step size
1/(2*beta)."""

from __future__ import annotations

import numpy as np

from ..core import GAUSSIAN, NONE, SHUFFLE, PrivacyBudget, RunConfig, RunResult
from ..privacy import plan_noise
from ..prox import prox
from ..rng import derive_rng
from ..shuffle import analyze_counts, choose_params, randomize_matrix
from . import messages
from .common import Trajectory, aggregate, effective_loss, gaussian_noise, initial_point

__all__ = ["run_isrl_prox_sgd", "run_sdp_prox_sgd"]


def _run_prox_sgd(problem, config: RunConfig, algorithm: str,
                  params_override=None) -> RunResult:
    loss = effective_loss(problem, config)
    ds = problem.dataset
    N, n, d = ds.n_silos, ds.records_per_silo, ds.n_features
    plan = plan_noise(algorithm, config, n=n, d=d, L=loss.lipschitz_L,
                      beta=loss.smooth_beta, n_silos=N)
    R = config.rounds
    beta = loss.smooth_beta
    step = 1.0 / (2.0 * beta)
    private = config.mechanism != NONE
    K = plan.batch_size if private else (config.k or n)

    traj = Trajectory(problem=problem, loss=loss, config=config, plan=plan,
                      algo_tag=algorithm, eta_metric=step, total_rounds=R)
    w = initial_point(problem, config)
    traj.record(w, is_candidate=False)

    perms = None
    if private:
        # fixed per-silo sample order; round r consumes slice [rK, (r+1)K)
        perms = [derive_rng(config.seed, algorithm, 0, i, "batch_perm").permutation(n)
                 for i in range(N)]

    shuffle_budget = plan.shuffle_budgets.get("round") if plan.mechanism == SHUFFLE else None

    for r in range(R):
        silos = traj.availability(r)
        if private:
            batches = {i: perms[i][r * K:(r + 1) * K] for i in silos}
        else:
            batches = {i: np.arange(n) for i in silos}

        if plan.mechanism == SHUFFLE:
            eps_round, delta_round, rng_range = shuffle_budget
            contributors = []
            for i in silos:
                feats, labels = ds.silo(i)
                contributors.append(messages.per_sample_clipped(
                    loss, w, feats, labels, batches[i]))
            stack = np.concatenate(contributors, axis=0)
            params = params_override or choose_params(
                PrivacyBudget(eps_round, delta_round), stack.shape[0], d, rng_range)
            counts = randomize_matrix(stack, rng_range, params,
                                      traj.noise_stream(r, 0, "protocol"))
            gbar = analyze_counts(counts, params, stack.shape[0], rng_range) / stack.shape[0]
            traj.add_cost(grad_evals=stack.shape[0],
                          protocol_scalars=stack.shape[0] * d)
        else:
            msgs = []
            for i in silos:
                feats, labels = ds.silo(i)
                g = messages.sgd_message(loss, w, feats, labels, batches[i])
                g = g + gaussian_noise(traj, r, i, plan.sigma_sq, d)
                msgs.append(g)
            gbar = aggregate(msgs)
            traj.add_cost(grad_evals=len(silos) * K)
            if plan.mechanism == GAUSSIAN:
                traj.charge(plan.rho_budget / R)

        w = prox(loss.f1, step, w - step * gbar)
        traj.record(w, is_candidate=False)

    # Prox-SGD outputs the last iterate
    result = traj.finish(w)
    result.w_priv = w
    result.w_priv_index = R
    return result


def run_isrl_prox_sgd(problem, config: RunConfig) -> RunResult:
    if config.mechanism == SHUFFLE:
        raise ValueError("use run_sdp_prox_sgd for the shuffle mechanism")
    return _run_prox_sgd(problem, config, "isrl_prox_sgd")


def run_sdp_prox_sgd(problem, config: RunConfig, params_override=None) -> RunResult:
    if config.mechanism != SHUFFLE:
        raise ValueError("run_sdp_prox_sgd requires mechanism='shuffle'")
    return _run_prox_sgd(problem, config, "sdp_prox_sgd",
                         params_override=params_override)
