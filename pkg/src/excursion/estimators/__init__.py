"""Excursion-effect estimating equations, solvers and inference."""
from .estimate import (
    ESTIMATORS,
    EstimandSpec,
    EstimateReport,
    effect_names,
    estimate,
    fit_gee,
    prepare_inputs,
    reference_probs,
)
from .gee import fit_log_gee
from .scores import (
    NONPARAMETRIC,
    PARAMETRIC,
    TERMS,
    ScoreContext,
    ScoreInputs,
    score,
    score_context,
    score_dr_emee_nonp,
    score_ece,
    score_ece_nonp,
    score_emee,
    score_emee_nonp,
)
from .solver import SolverResult, central_jacobian, numeric_jacobian, sandwich_cov, solve_score
from .weights import blip_down, h_marginal, weight_ktilde, weight_w

__all__ = [
    "ESTIMATORS", "EstimandSpec", "EstimateReport", "NONPARAMETRIC", "PARAMETRIC", "TERMS",
    "ScoreContext", "ScoreInputs", "SolverResult", "blip_down", "central_jacobian",
    "effect_names", "estimate", "fit_gee", "fit_log_gee", "h_marginal", "numeric_jacobian",
    "prepare_inputs", "reference_probs", "sandwich_cov", "score", "score_context",
    "score_dr_emee_nonp", "score_ece", "score_ece_nonp", "score_emee", "score_emee_nonp",
    "solve_score", "weight_ktilde", "weight_w",
]
