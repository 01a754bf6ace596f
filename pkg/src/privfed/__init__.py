"""Private federated optimization simulator.

Record-level and shuffle-DP variants of proximal SGD, variance-reduced
proximal SGD with PL restarts, and path-integrated (SPIDER-style) federated
optimization, with a zCDP privacy accountant, a binomial-noise shuffle
summation protocol, proximal operators, and synthetic heterogeneous
benchmark problems.
"""

from .core import (Availability, CompositeLoss, FederatedDataset,
                   PrivacyBudget, Regularizer, RunConfig, RunResult,
                   clip_gradient)
from .optimizers import ALGORITHMS, run
from .privacy import (InfeasibleConfigError, NoisePlan, ZcdpLedger,
                      advanced_composition, amplify_by_subsampling,
                      compose_zcdp, gaussian_sigma_sq, isrl_to_user_level,
                      plan_noise, update_sensitivity, zcdp_to_dp)
from .problems import (ProblemInstance, build_problem, evaluate,
                       heterogeneity, load_csv, make_least_squares,
                       make_logistic, make_quadratic, save_csv)
from .prox import gradient_mapping, ppl_residual, prox
from .rng import derive_rng
from .shuffle import (P1DParams, analyze_scalar, analyze_vector,
                      choose_params, estimator_variance_bound,
                      randomize_scalar, randomize_vector)

__version__ = "0.1.0"

__all__ = [
    "Availability", "CompositeLoss", "FederatedDataset", "PrivacyBudget",
    "Regularizer", "RunConfig", "RunResult", "clip_gradient",
    "ALGORITHMS", "run",
    "InfeasibleConfigError", "NoisePlan", "ZcdpLedger",
    "advanced_composition", "amplify_by_subsampling", "compose_zcdp",
    "gaussian_sigma_sq", "isrl_to_user_level", "plan_noise",
    "update_sensitivity", "zcdp_to_dp",
    "ProblemInstance", "build_problem", "evaluate", "heterogeneity",
    "load_csv", "make_least_squares", "make_logistic", "make_quadratic",
    "save_csv",
    "gradient_mapping", "ppl_residual", "prox",
    "derive_rng",
    "P1DParams", "analyze_scalar", "analyze_vector", "choose_params",
    "estimator_variance_bound", "randomize_scalar", "randomize_vector",
    "__version__",
]
