"""Federated optimization algorithms sharing one round-structured loop:
the server broadcasts, available silos compute privatized updates, the
server aggregates (ascending silo order) and takes a prox step."""

from __future__ import annotations

from ..core import RunConfig, RunResult
from .baselines import run_baseline
from .common import initial_point
from .prox_sgd import run_isrl_prox_sgd, run_sdp_prox_sgd
from .spider import (SpiderDiagnostics, auto_config_spider, run_isrl_spider,
                     run_isrl_spider_alt, run_sdp_spider)
from .svrg import (run_isrl_prox_pl_svrg, run_isrl_prox_svrg,
                   run_sdp_prox_pl_svrg, run_sdp_prox_svrg, svrg_default_eta)

__all__ = [
    "run", "ALGORITHMS",
    "run_isrl_prox_sgd", "run_sdp_prox_sgd",
    "run_isrl_prox_svrg", "run_isrl_prox_pl_svrg",
    "run_sdp_prox_svrg", "run_sdp_prox_pl_svrg",
    "run_isrl_spider", "run_sdp_spider", "run_isrl_spider_alt",
    "run_baseline", "auto_config_spider", "svrg_default_eta",
    "SpiderDiagnostics",
]

ALGORITHMS = {
    "isrl_prox_sgd": run_isrl_prox_sgd,
    "sdp_prox_sgd": run_sdp_prox_sgd,
    "isrl_prox_svrg": lambda problem, config: run_isrl_prox_svrg(
        problem, initial_point(problem, config), config),
    "isrl_prox_pl_svrg": run_isrl_prox_pl_svrg,
    "sdp_prox_svrg": run_sdp_prox_svrg,
    "sdp_prox_pl_svrg": run_sdp_prox_pl_svrg,
    "isrl_spider": run_isrl_spider,
    "sdp_spider": run_sdp_spider,
    "isrl_spider_alt": run_isrl_spider_alt,
    "mb_sgd": lambda problem, config: run_baseline("mb_sgd", False, problem, config),
    "isrl_mb_sgd": lambda problem, config: run_baseline("mb_sgd", True, problem, config),
    "local_sgd": lambda problem, config: run_baseline("local_sgd", False, problem, config),
    "isrl_local_sgd": lambda problem, config: run_baseline("local_sgd", True, problem, config),
}


def run(algorithm: str, problem, config: RunConfig) -> RunResult:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; "
                         f"choose from {sorted(ALGORITHMS)}")
    result = ALGORITHMS[algorithm](problem, config)
    result.algorithm = algorithm
    return result
