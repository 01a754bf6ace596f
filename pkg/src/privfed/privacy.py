"""Noise calibration, sensitivity bounds and privacy accounting.

Calibration uses each algorithm's exact published variance formula; the
accountant composes through zCDP.  The per-run ledger charges the plan's
budget shares (which sum to the run's zCDP budget eps^2 / (8 ln(1/delta)),
valid whenever eps <= 2 ln(1/delta) is checked at plan time), so
`epsilon_spent` reports consumption of the calibrated budget rather than an
independent audit of the noise; see NoisePlan.rho_budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .core import GAUSSIAN, NONE, SHUFFLE, PrivacyBudget, RunConfig

__all__ = [
    "InfeasibleConfigError", "ZcdpLedger",
    "gaussian_sigma_sq", "zcdp_to_dp", "compose_zcdp", "advanced_composition",
    "amplify_by_subsampling", "isrl_to_user_level", "update_sensitivity",
    "NoisePlan", "plan_noise",
]

GAUSSIAN_ALGORITHMS = (
    "isrl_prox_sgd", "isrl_prox_svrg", "isrl_prox_pl_svrg",
    "isrl_spider", "isrl_spider_alt", "mb_sgd", "local_sgd",
)
SHUFFLE_ALGORITHMS = (
    "sdp_prox_sgd", "sdp_prox_svrg", "sdp_prox_pl_svrg", "sdp_spider",
)


class InfeasibleConfigError(ValueError):
    """Raised when a run configuration violates a calibration constraint.

    `constraint` names the violated inequality, e.g. "epsilon <= 2*ln(1/delta)".
    """

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(f"infeasible config: {constraint}"
                         + (f" ({detail})" if detail else ""))


# ---------------------------------------------------------------------------
# accountant primitives
# ---------------------------------------------------------------------------

def gaussian_sigma_sq(sensitivity: float, budget: PrivacyBudget) -> float:
    """Variance 4*Delta^2*ln(1/delta)/eps^2 making the Gaussian mechanism
    (eps, delta)-DP, valid for eps <= 2 ln(1/delta)."""
    if sensitivity < 0:
        raise ValueError("sensitivity must be >= 0")
    eps, delta = budget.epsilon, budget.delta
    if eps > 2.0 * math.log(1.0 / delta):
        raise InfeasibleConfigError("epsilon <= 2*ln(1/delta)",
                                    f"epsilon={eps}, delta={delta}")
    return 4.0 * sensitivity ** 2 * math.log(1.0 / delta) / eps ** 2


def zcdp_to_dp(rho: float, delta: float) -> float:
    """epsilon = rho + 2*sqrt(rho*ln(1/delta)) for a rho-zCDP mechanism."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


@dataclass(frozen=True)
class ZcdpLedger:
    entries: tuple = ()

    @property
    def total(self) -> float:
        return math.fsum(self.entries)

    def to_dp(self, delta: float) -> float:
        return zcdp_to_dp(self.total, delta)


def compose_zcdp(ledger: ZcdpLedger, rho_new: float) -> ZcdpLedger:
    """Additive zCDP composition: total increments by rho_new."""
    if rho_new < 0:
        raise ValueError("rho must be >= 0")
    return ZcdpLedger(entries=ledger.entries + (rho_new,))


def advanced_composition(eps: float, delta: float, rounds: int,
                         delta_prime: float):
    """(eps', R*delta + delta') for the adaptive composition of R
    (eps, delta)-DP mechanisms: eps' = sqrt(2R ln(1/delta'))*eps + R*eps*(e^eps - 1)."""
    if eps <= 0 or delta <= 0 or delta_prime <= 0 or rounds < 1:
        raise ValueError("all arguments must be positive")
    eps_total = (math.sqrt(2.0 * rounds * math.log(1.0 / delta_prime)) * eps
                 + rounds * eps * math.expm1(eps))
    return eps_total, rounds * delta + delta_prime


def amplify_by_subsampling(eps: float, rate: float) -> float:
    """2*rate*eps, the amplified level for a subsampled (eps, .)-DP step.

    The amplification lemma is only applied for eps <= 1.
    """
    if eps < 0 or rate < 0:
        raise ValueError("arguments must be >= 0")
    if eps > 1.0:
        raise InfeasibleConfigError("epsilon <= 1 (amplification by subsampling)",
                                    f"epsilon={eps}")
    return 2.0 * rate * eps


def isrl_to_user_level(eps: float, delta: float, n: int):
    """An (eps, delta)-record-level guarantee implies (n*eps, n*e^{(n-1)eps}*delta)
    at user level."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return n * eps, n * math.exp((n - 1) * eps) * delta


def update_sensitivity(kind: str, L: float, *, K: Optional[int] = None,
                       n: Optional[int] = None, beta: Optional[float] = None,
                       step_norm: Optional[float] = None) -> float:
    """L2 sensitivity of one silo's pre-noise message to swapping one record.

    sgd_batch -> 2L/K; svrg_diff -> 4L/K; spider_full -> 2L/n;
    spider_diff -> min(2*beta*step_norm, 4L)/n.
    """
    if not L > 0:
        raise ValueError("L must be > 0")
    if kind == "sgd_batch":
        if K is None or K < 1:
            raise ValueError("sgd_batch needs K >= 1")
        return 2.0 * L / K
    if kind == "svrg_diff":
        if K is None or K < 1:
            raise ValueError("svrg_diff needs K >= 1")
        return 4.0 * L / K
    if kind == "spider_full":
        if n is None or n < 1:
            raise ValueError("spider_full needs n >= 1")
        return 2.0 * L / n
    if kind == "spider_diff":
        if n is None or n < 1 or beta is None or step_norm is None:
            raise ValueError("spider_diff needs n, beta and step_norm")
        if beta < 0 or step_norm < 0:
            raise ValueError("beta and step_norm must be >= 0")
        return min(2.0 * beta * step_norm, 4.0 * L) / n
    raise ValueError(f"unknown update kind {kind!r}")


# ---------------------------------------------------------------------------
# per-algorithm noise plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisePlan:
    """Per-update Gaussian variances (or shuffle budgets) plus the derived
    batch/round requirements, the exact formulas used, and the zCDP budget
    the run's ledger will consume."""

    algorithm: str
    mechanism: str
    epsilon: float
    delta: float
    sigma_sq: Optional[float] = None          # Prox-SGD / baselines
    sigma1_sq: Optional[float] = None         # SVRG anchor / SPIDER full
    sigma2_sq: Optional[float] = None         # SVRG inner / SPIDER-alt full
    sigma2_sq_slope: Optional[float] = None   # SPIDER: times ||w_r - w_{r-1}||^2
    sigma2_sq_cap: Optional[float] = None     # SPIDER: hard cap
    batch_size: Optional[int] = None          # derived K
    epoch_length: Optional[int] = None        # derived Q
    rho_budget: float = 0.0
    shuffle_budgets: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    formulas: dict = field(default_factory=dict)
    binding_constraint: str = ""

    def end_to_end_epsilon(self) -> float:
        """zcdp_to_dp of the full budget; inf for non-private plans."""
        if self.mechanism == NONE:
            return math.inf
        if self.mechanism == SHUFFLE:
            return self.epsilon
        return zcdp_to_dp(self.rho_budget, self.delta)

    def as_dict(self) -> dict:
        out = {
            "algorithm": self.algorithm,
            "mechanism": self.mechanism,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "rho_budget": self.rho_budget,
            "end_to_end_epsilon": self.end_to_end_epsilon(),
            "binding_constraint": self.binding_constraint,
            "inputs": dict(self.inputs),
            "formulas": dict(self.formulas),
        }
        for k in ("sigma_sq", "sigma1_sq", "sigma2_sq", "sigma2_sq_slope",
                  "sigma2_sq_cap", "batch_size", "epoch_length"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        if self.shuffle_budgets:
            out["shuffle_budgets"] = {k: list(v) for k, v in self.shuffle_budgets.items()}
        if not math.isfinite(out["end_to_end_epsilon"]):
            out["end_to_end_epsilon"] = "inf"  # NonPrivate marker
        return out


def _require(ok: bool, constraint: str, detail: str = ""):
    if not ok:
        raise InfeasibleConfigError(constraint, detail)


def _gaussian_preconditions(eps: float, delta: float):
    _require(eps <= 2.0 * math.log(1.0 / delta), "epsilon <= 2*ln(1/delta)",
             f"epsilon={eps}, 2*ln(1/delta)={2.0 * math.log(1.0 / delta):.6g}")


def _rho_budget(eps: float, delta: float) -> float:
    # the zCDP level that converts to (eps, delta)-DP for eps <= 2 ln(1/delta)
    return eps ** 2 / (8.0 * math.log(1.0 / delta))


def _structure(algorithm: str, config: RunConfig, n: int) -> dict:
    """Resolve the algorithm's structural parameters (independent of the
    mechanism): batch sizes, epoch length, round counts."""
    out: dict = {}
    if algorithm in ("isrl_prox_sgd", "sdp_prox_sgd"):
        R = config.rounds
        if config.mechanism == NONE:
            K = config.k if config.k is not None else n  # full batch by default
        else:
            K = n // R
            _require(K >= 1, "K = floor(n/R) >= 1", f"n={n}, R={R}")
        out.update(R=R, K=K)
    elif algorithm.endswith("svrg"):
        S = config.restarts if algorithm.endswith("pl_svrg") else 1
        E = config.epochs
        K = config.k if config.k is not None else n
        _require(K <= n, "K <= n", f"K={K}, n={n}")
        Q = config.epoch_length if config.epoch_length is not None else n // K
        _require(Q >= 1, "Q = floor(n/K) >= 1", f"n={n}, K={K}")
        out.update(S=S, E=E, K=K, Q=Q, R=E * Q)
    elif algorithm in ("isrl_spider", "sdp_spider"):
        K1 = config.k1 if config.k1 is not None else n
        K2 = config.k2 if config.k2 is not None else n
        _require(K1 <= n and K2 <= n, "K1, K2 <= n", f"K1={K1}, K2={K2}, n={n}")
        out.update(R=config.rounds, q=config.q, K1=K1, K2=K2)
    elif algorithm == "isrl_spider_alt":
        R = config.rounds
        eps = config.privacy.epsilon if config.privacy is not None else 1.0
        k_default = max(1, min(n, math.ceil(n * math.sqrt(eps) / (2.0 * math.sqrt(R)))))
        K1 = config.k1 if config.k1 is not None else k_default
        K2 = config.k2 if config.k2 is not None else k_default
        _require(K1 <= n and K2 <= n, "K1, K2 <= n", f"K1={K1}, K2={K2}, n={n}")
        out.update(R=R, K1=K1, K2=K2)
    elif algorithm in ("mb_sgd", "local_sgd"):
        K = config.k if config.k is not None else n
        _require(K <= n, "K <= n", f"K={K}, n={n}")
        out.update(R=config.rounds, K=K,
                   steps=config.rounds * (config.local_steps if algorithm == "local_sgd" else 1))
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return out


def plan_noise(algorithm: str, config: RunConfig, *, n: int, d: int,
               L: float, beta: float, n_silos: Optional[int] = None) -> NoisePlan:
    """Exact per-algorithm noise variances plus feasibility checks.

    Raises InfeasibleConfigError naming the violated inequality; the returned
    plan records the formulas and every input they were evaluated with.
    """
    struct = _structure(algorithm, config, n)
    if config.mechanism == NONE:
        return NoisePlan(algorithm=algorithm, mechanism=NONE,
                         epsilon=math.inf, delta=0.0,
                         sigma_sq=0.0, sigma1_sq=0.0, sigma2_sq=0.0,
                         sigma2_sq_slope=0.0 if config.spider_slope else math.inf,
                         sigma2_sq_cap=0.0,
                         batch_size=struct.get("K", struct.get("K1")),
                         epoch_length=struct.get("Q"),
                         inputs={"n": n, "d": d, "L": L, "beta": beta, **struct},
                         formulas={"mechanism": "non-private: all variances 0"})

    if config.privacy is None:
        raise InfeasibleConfigError("privacy budget required", algorithm)
    eps, delta = config.privacy.epsilon, config.privacy.delta
    inputs = {"n": n, "d": d, "L": L, "beta": beta, "epsilon": eps, "delta": delta}
    ln1d = math.log(1.0 / delta)

    if algorithm in ("isrl_prox_sgd",):
        _gaussian_preconditions(eps, delta)
        R, K = struct["R"], struct["K"]
        sigma_sq = 8.0 * L ** 2 * ln1d / (eps ** 2 * K ** 2)
        return NoisePlan(
            algorithm=algorithm, mechanism=GAUSSIAN, epsilon=eps, delta=delta,
            sigma_sq=sigma_sq, batch_size=K, rho_budget=_rho_budget(eps, delta),
            inputs={**inputs, "R": R, "K": K},
            formulas={"sigma_sq": "8*L^2*ln(1/delta)/(eps^2*K^2)",
                      "K": "floor(n/R), disjoint without-replacement batches"},
            binding_constraint="epsilon <= 2*ln(1/delta)")

    if algorithm in ("isrl_prox_svrg", "isrl_prox_pl_svrg"):
        _gaussian_preconditions(eps, delta)
        _require(eps <= 15.0, "epsilon <= 15", f"epsilon={eps}")
        S, E, K, Q, R = (struct["S"], struct["E"], struct["K"], struct["Q"],
                         struct["R"])
        k_min = eps * n / (4.0 * math.sqrt(2.0 * S * R * math.log(2.0 / delta)))
        _require(K >= k_min, "K >= eps*n/(4*sqrt(2*S*R*ln(2/delta)))",
                 f"K={K}, bound={k_min:.6g}")
        sigma1_sq = (256.0 * L ** 2 * S * E * math.log(2.0 / delta)
                     * math.log(5.0 * E / delta) / (eps ** 2 * n ** 2))
        sigma2_sq = (1024.0 * L ** 2 * S * R * math.log(2.0 / delta)
                     * math.log(2.5 * R / delta) / (eps ** 2 * n ** 2))
        return NoisePlan(
            algorithm=algorithm, mechanism=GAUSSIAN, epsilon=eps, delta=delta,
            sigma1_sq=sigma1_sq, sigma2_sq=sigma2_sq, batch_size=K,
            epoch_length=Q, rho_budget=_rho_budget(eps, delta),
            inputs={**inputs, "S": S, "E": E, "K": K, "Q": Q, "R": R},
            formulas={
                "sigma1_sq": "256*L^2*S*E*log(2/delta)*log(5E/delta)/(eps^2*n^2)",
                "sigma2_sq": "1024*L^2*S*R*log(2/delta)*log(2.5R/delta)/(eps^2*n^2)",
                "K_bound": "K >= eps*n/(4*sqrt(2*S*R*ln(2/delta)))"},
            binding_constraint="K >= eps*n/(4*sqrt(2*S*R*ln(2/delta)))")

    if algorithm in ("isrl_spider",):
        _gaussian_preconditions(eps, delta)
        R, q, K1, K2 = struct["R"], struct["q"], struct["K1"], struct["K2"]
        sigma1_sq = (16.0 * L ** 2 * ln1d / (eps ** 2 * K1 ** 2)
                     * max(R / q, 1.0))
        slope = 16.0 * beta ** 2 * R * ln1d / (eps ** 2 * K2 ** 2)
        cap = 64.0 * L ** 2 * R * ln1d / (eps ** 2 * K2 ** 2)
        return NoisePlan(
            algorithm=algorithm, mechanism=GAUSSIAN, epsilon=eps, delta=delta,
            sigma1_sq=sigma1_sq, sigma2_sq_slope=(slope if config.spider_slope else math.inf),
            sigma2_sq_cap=cap, rho_budget=_rho_budget(eps, delta),
            inputs={**inputs, "R": R, "q": q, "K1": K1, "K2": K2,
                    "slope_enabled": config.spider_slope},
            formulas={
                "sigma1_sq": "16*L^2*ln(1/delta)/(eps^2*K1^2) * max(R/q, 1)",
                "sigma2_sq_slope": "16*beta^2*R*ln(1/delta)/(eps^2*K2^2)",
                "sigma2_sq_cap": "64*L^2*R*ln(1/delta)/(eps^2*K2^2)",
                "per_round_diff_variance": "min(slope*||w_r - w_{r-1}||^2, cap)"},
            binding_constraint="epsilon <= 2*ln(1/delta)")

    if algorithm in ("isrl_spider_alt",):
        _gaussian_preconditions(eps, delta)
        R, K1, K2 = struct["R"], struct["K1"], struct["K2"]
        sigma1_sq = 32.0 * L ** 2 * math.log(2.0 / delta) * R / (n ** 2 * eps ** 2)
        sigma2_sq = 8.0 * L ** 2 * math.log(2.0 / delta) * R / (n ** 2 * eps ** 2)
        return NoisePlan(
            algorithm=algorithm, mechanism=GAUSSIAN, epsilon=eps, delta=delta,
            sigma1_sq=sigma1_sq, sigma2_sq=sigma2_sq, batch_size=K1,
            rho_budget=_rho_budget(eps, delta),
            inputs={**inputs, "R": R, "K1": K1, "K2": K2},
            formulas={
                "sigma1_sq": "32*L^2*ln(2/delta)*R/(n^2*eps^2)  (difference step)",
                "sigma2_sq": "8*L^2*ln(2/delta)*R/(n^2*eps^2)  (full step)",
                "K_default": "ceil(n*sqrt(eps)/(2*sqrt(R)))"},
            binding_constraint="epsilon <= 2*ln(1/delta)")

    if algorithm in ("mb_sgd", "local_sgd"):
        _gaussian_preconditions(eps, delta)
        R, K, steps = struct["R"], struct["K"], struct["steps"]
        # zCDP split evenly over all noisy messages: sigma^2 = Delta^2/(2*rho_step)
        delta2 = update_sensitivity("sgd_batch", L, K=K)
        sigma_sq = 4.0 * delta2 ** 2 * steps * ln1d / eps ** 2
        return NoisePlan(
            algorithm=algorithm, mechanism=GAUSSIAN, epsilon=eps, delta=delta,
            sigma_sq=sigma_sq, batch_size=K, rho_budget=_rho_budget(eps, delta),
            inputs={**inputs, "R": R, "K": K, "steps": steps},
            formulas={"sigma_sq": "(2L/K)^2 * 4*steps*ln(1/delta)/eps^2"
                                  "  (zCDP budget split over all messages)"},
            binding_constraint="epsilon <= 2*ln(1/delta)")

    if algorithm in SHUFFLE_ALGORITHMS:
        return _plan_shuffle(algorithm, config, n=n, n_silos=n_silos,
                             inputs=inputs, struct=struct)

    raise ValueError(f"unknown algorithm {algorithm!r}")


def _plan_shuffle(algorithm, config, *, n, n_silos, inputs, struct) -> NoisePlan:
    """Budget splitting for the SDP algorithms, following each pseudocode's
    input line; the per-call protocol parameters are derived at run time from
    these (epsilon, delta, range) triples."""
    eps, delta = config.privacy.epsilon, config.privacy.delta
    _require(0.0 < eps <= 15.0, "0 < epsilon <= 15 (shuffle protocol range)",
             f"epsilon={eps}")
    if n_silos is None:
        raise ValueError("shuffle plans need n_silos")
    L = inputs["L"]
    M = config.availability.min_m(n_silos)
    budgets = {}
    formulas = {}

    if algorithm == "sdp_prox_sgd":
        _require(M >= n_silos * min(eps / 2.0, 1.0), "M >= N*min(eps/2, 1)",
                 f"M={M}, N={n_silos}, eps={eps}")
        R, K = struct["R"], struct["K"]
        budgets["round"] = (n_silos / (2.0 * M) * eps, delta, L)
        formulas["round"] = "P_vec budget ((N/2M)*eps, delta), range L"
        return NoisePlan(algorithm=algorithm, mechanism=SHUFFLE, epsilon=eps,
                         delta=delta, batch_size=K, shuffle_budgets=budgets,
                         inputs={**inputs, "R": R, "K": K, "M": M, "N": n_silos},
                         formulas=formulas,
                         binding_constraint="M >= N*min(eps/2, 1)")

    if algorithm in ("sdp_prox_svrg", "sdp_prox_pl_svrg"):
        S, E, K, Q, R = (struct["S"], struct["E"], struct["K"], struct["Q"],
                         struct["R"])
        if S > 1:
            # Alg splits each restart to (eps/(2*sqrt(2S)), delta/(2S))
            eps_call = eps / (2.0 * math.sqrt(2.0 * S))
            delta_call = delta / (2.0 * S)
        else:
            eps_call, delta_call = eps, delta
        eps_t = eps_call * n_silos * n / (8.0 * M * K * math.sqrt(4.0 * E * Q * math.log(2.0 / delta_call)))
        delta_t = delta_call / (2.0 * E * Q)
        budgets["anchor"] = (eps_t, delta_t, L)
        budgets["inner"] = (eps_t, delta_t, 2.0 * L)
        formulas["per_call"] = ("eps_tilde = eps*N*n/(8*M*K*sqrt(4*E*Q*ln(2/delta)));"
                                " delta_tilde = delta/(2*E*Q); anchor range L, inner range 2L")
        if S > 1:
            formulas["restarts"] = "each restart runs at (eps/(2*sqrt(2S)), delta/(2S))"
        return NoisePlan(algorithm=algorithm, mechanism=SHUFFLE, epsilon=eps,
                         delta=delta, batch_size=K, epoch_length=Q,
                         shuffle_budgets=budgets,
                         inputs={**inputs, "S": S, "E": E, "K": K, "Q": Q,
                                 "R": R, "M": M, "N": n_silos},
                         formulas=formulas,
                         binding_constraint="0 < epsilon <= 15 (shuffle protocol range)")

    if algorithm == "sdp_spider":
        R, q, K1, K2 = struct["R"], struct["q"], struct["K1"], struct["K2"]
        ln1d = math.log(1.0 / delta)
        eps_full = (eps * n * n_silos
                    / (4.0 * K1 * M * math.sqrt(2.0 * ln1d) * max(1.0, math.sqrt(R / q))))
        delta_full = delta * min(q, R) / (2.0 * R)
        eps_diff = eps * n_silos * n / (4.0 * M * K2 * math.sqrt(2.0 * R * ln1d))
        delta_diff = delta / (2.0 * R)
        budgets["full"] = (eps_full, delta_full, L)
        budgets["diff"] = (eps_diff, delta_diff, None)  # range min(2L, beta*step) at run time
        formulas["full"] = ("eps*n*N/(4*K1*M*sqrt(2*ln(1/delta))*max(1, sqrt(R/q))),"
                            " delta*min(q,R)/(2R), range L")
        formulas["diff"] = ("eps*N*n/(4*M*K2*sqrt(2*R*ln(1/delta))), delta/(2R),"
                            " range min(2L, beta*||w_r - w_{r-1}||)")
        return NoisePlan(algorithm=algorithm, mechanism=SHUFFLE, epsilon=eps,
                         delta=delta, shuffle_budgets=budgets,
                         inputs={**inputs, "R": R, "q": q, "K1": K1, "K2": K2,
                                 "M": M, "N": n_silos},
                         formulas=formulas,
                         binding_constraint="0 < epsilon <= 15 (shuffle protocol range)")

    raise ValueError(f"unknown shuffle algorithm {algorithm!r}")
