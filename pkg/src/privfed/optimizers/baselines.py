"""Comparison baselines: minibatch SGD and local SGD (federated averaging),
each in a private (per-message Gaussian noise) and non-private form.

MB-SGD is the q = 1 special case of the path-integrated estimator, so the
private variant delegates to that loop with the same derivation keys; its
noise formula coincides with splitting the zCDP budget evenly over the R
batch-gradient messages.
"""

from __future__ import annotations

import numpy as np

from ..core import GAUSSIAN, NONE, RunConfig, RunResult
from ..privacy import plan_noise
from ..prox import prox
from . import messages
from .common import Trajectory, aggregate, effective_loss, gaussian_noise, initial_point
from .spider import _run_spider

__all__ = ["run_baseline"]


def run_baseline(kind: str, private: bool, problem, config: RunConfig) -> RunResult:
    if kind == "mb_sgd":
        return _run_mb_sgd(problem, config, private)
    if kind == "local_sgd":
        return _run_local_sgd(problem, config, private)
    raise ValueError(f"unknown baseline {kind!r}")


def _run_mb_sgd(problem, config: RunConfig, private: bool) -> RunResult:
    n = problem.dataset.records_per_silo
    K = config.k if config.k is not None else n
    mech = config.mechanism if private else NONE
    cfg = config.with_updates(q=1, k1=K, k2=K, mechanism=mech)
    result = _run_spider(problem, cfg, "isrl_spider")
    result.algorithm = "isrl_mb_sgd" if private else "mb_sgd"
    # the baseline reports its last iterate
    result.w_priv = result.final_model
    result.w_priv_index = len(result.records) - 1
    return result


def _run_local_sgd(problem, config: RunConfig, private: bool) -> RunResult:
    mech = config.mechanism if private else NONE
    config = config.with_updates(mechanism=mech)
    algorithm = "local_sgd"
    loss = effective_loss(problem, config)
    ds = problem.dataset
    N, n, d = ds.n_silos, ds.records_per_silo, ds.n_features
    plan = plan_noise(algorithm, config, n=n, d=d, L=loss.lipschitz_L,
                      beta=loss.smooth_beta, n_silos=N)
    R, K = plan.inputs["R"], plan.inputs["K"]
    steps = config.local_steps
    eta = config.eta if config.eta is not None else 1.0 / (2.0 * loss.smooth_beta)

    traj = Trajectory(problem=problem, loss=loss, config=config, plan=plan,
                      algo_tag=algorithm, eta_metric=eta, total_rounds=R)
    w = initial_point(problem, config)
    traj.record(w, is_candidate=False)

    for r in range(R):
        silos = traj.availability(r)
        local_models = []
        for i in silos:
            feats, labels = ds.silo(i)
            wi = w
            for s in range(steps):
                if K == n:
                    idx = np.arange(n)
                else:
                    idx = traj.noise_stream((r, s), i, "batch").integers(0, n, size=K)
                g = messages.sgd_message(loss, wi, feats, labels, idx)
                g = g + gaussian_noise(traj, (r, s), i, plan.sigma_sq, d)
                wi = wi - eta * g
            local_models.append(wi)
        traj.add_cost(grad_evals=len(silos) * steps * K)
        # the regularizer is applied once per round, at aggregation
        w = prox(loss.f1, eta, aggregate(local_models))
        if plan.mechanism == GAUSSIAN:
            traj.charge(plan.rho_budget / R)
        traj.record(w, is_candidate=False)

    result = traj.finish(w)
    result.algorithm = "isrl_local_sgd" if private else "local_sgd"
    result.w_priv = w
    result.w_priv_index = len(result.records) - 1
    return result
