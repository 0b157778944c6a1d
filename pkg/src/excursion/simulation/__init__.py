"""Simulation scenarios, ground-truth effects and replication studies."""
from .generate import (
    ScenarioConfig,
    expit,
    gen_scenario,
    monte_carlo_effect,
    outcome_params,
    batched_poisson_mle,
    poisson_mle,
    sample_zinb,
    thompson_probability,
    true_effect,
    ts_features,
)
from .replicate import (
    ALL_ESTIMATORS,
    ReplicationSummary,
    compute_metrics,
    default_estimators,
    nuisance_config,
    parameter_names,
    replicate_rng,
    run_one,
    run_replications,
    working_model,
)

__all__ = [
    "ALL_ESTIMATORS", "ReplicationSummary", "ScenarioConfig", "compute_metrics",
    "default_estimators", "expit", "gen_scenario", "monte_carlo_effect", "nuisance_config",
    "outcome_params", "parameter_names", "poisson_mle", "replicate_rng", "run_one",
    "run_replications", "sample_zinb", "thompson_probability", "true_effect", "ts_features",
    "working_model",
]
