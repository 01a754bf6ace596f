"""Shared machinery for the round-structured simulation loop: availability
draws, deterministic aggregation, metric recording and budget charging."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import (GAUSSIAN, NONE, SHUFFLE, CompositeLoss, RoundRecord,
                    RunConfig, RunResult, as_model_point)
from ..privacy import NoisePlan, ZcdpLedger, compose_zcdp, zcdp_to_dp
from ..prox import gradient_mapping
from ..rng import derive_rng

# nominal unit costs for the deterministic wall_ms proxy
GRAD_EVAL_MS = 1e-3
PROTOCOL_SCALAR_MS = 1e-4


def effective_loss(problem, config: RunConfig) -> CompositeLoss:
    """The problem loss with the run's clip threshold applied."""
    if config.clip is not None:
        return problem.loss.with_clip(config.clip)
    return problem.loss


def initial_point(problem, config: RunConfig) -> np.ndarray:
    d = problem.dataset.n_features
    if config.w0 is not None:
        return as_model_point(config.w0, d).copy()
    return np.zeros(d)


def aggregate(messages: list) -> np.ndarray:
    """Server average in ascending silo-index order (callers iterate sorted
    silo ids, so a plain fold keeps the reduction deterministic)."""
    out = np.zeros_like(messages[0])
    for m in messages:
        out += m
    return out / len(messages)


@dataclass
class Trajectory:
    """Accumulates per-round records for a run and finalizes the RunResult."""

    problem: object
    loss: CompositeLoss
    config: RunConfig
    plan: NoisePlan
    algo_tag: str
    eta_metric: float
    total_rounds: int
    records: list = field(default_factory=list)
    iterates: Optional[list] = None
    candidates: list = field(default_factory=list)
    ledger: ZcdpLedger = field(default_factory=ZcdpLedger)
    cost_ms: float = 0.0
    _round: int = 0

    def __post_init__(self):
        if self.config.record_iterates:
            self.iterates = []

    def availability(self, round_key) -> np.ndarray:
        stream = derive_rng(self.config.seed, self.algo_tag, round_key, 0,
                            "availability")
        return self.config.availability.draw(stream, self.problem.dataset.n_silos)

    def noise_stream(self, round_key, silo: int, purpose: str = "noise"):
        return derive_rng(self.config.seed, self.algo_tag, round_key, silo, purpose)

    def add_cost(self, grad_evals: int = 0, protocol_scalars: int = 0):
        self.cost_ms += grad_evals * GRAD_EVAL_MS + protocol_scalars * PROTOCOL_SCALAR_MS

    def charge(self, rho: float):
        self.ledger = compose_zcdp(self.ledger, rho)

    def epsilon_spent(self) -> float:
        if self.plan.mechanism == NONE:
            return math.inf
        if self.plan.mechanism == SHUFFLE:
            # linear consumption of the SDP budget across rounds
            return self.plan.epsilon * min(1.0, self._round / self.total_rounds)
        return zcdp_to_dp(self.ledger.total, self.plan.delta)

    def record(self, w: np.ndarray, is_candidate: bool = True):
        """Record metrics at w; rounds are numbered 0 (initial point) upward."""
        risk = self.loss.empirical_risk(w, self.problem.dataset)
        gm = gradient_mapping(self.loss, w, self.eta_metric, self.problem.dataset)
        excess = None
        if self.problem.known is not None:
            excess = risk - self.problem.known.f_star
        self.records.append(RoundRecord(
            round=self._round, train_risk=risk, excess_risk=excess,
            grad_mapping_norm_sq=gm.norm_sq, epsilon_spent=self.epsilon_spent(),
            wall_ms=self.cost_ms))
        if self.iterates is not None:
            self.iterates.append(w.copy())
        if is_candidate and self._round > 0:
            self.candidates.append(w.copy())
        self._round += 1

    def finish(self, final_model: np.ndarray, diagnostics=None) -> RunResult:
        cands = self.candidates if self.candidates else [final_model]
        stream = derive_rng(self.config.seed, self.algo_tag, 0, 0, "output")
        idx = stream.choice_index(len(cands))
        return RunResult(algorithm=self.algo_tag, records=self.records,
                         final_model=final_model, w_priv=cands[idx],
                         w_priv_index=idx, noise_plan=self.plan,
                         diagnostics=diagnostics,
                         iterates=self.iterates).validate()


def gaussian_noise(traj: Trajectory, round_key, silo: int, sigma_sq: float,
                   d: int, purpose: str = "noise") -> np.ndarray:
    if traj.config.mechanism != GAUSSIAN or sigma_sq <= 0.0:
        return np.zeros(d)
    stream = traj.noise_stream(round_key, silo, purpose)
    return stream.normal(d, scale=math.sqrt(sigma_sq))
