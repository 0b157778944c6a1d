"""Nuisance regressions: hurdle outcome means and propensities."""
from .glm import DEFAULT_LAMBDA_GRID, GLMFit, fit_penalized_glm
from .models import (
    HurdleFit,
    NuisanceConfig,
    NuisanceFit,
    NuisanceValues,
    PropensityModel,
    clip_probs,
    feature_frame,
    fit_hurdle_mean,
    fit_nuisance,
    fit_propensity,
    nuisance_values,
    predict_nuisance,
)
from .splines import AdditiveDesign, SplineBasis

__all__ = [
    "AdditiveDesign", "DEFAULT_LAMBDA_GRID", "GLMFit", "HurdleFit", "NuisanceConfig",
    "NuisanceFit", "NuisanceValues", "PropensityModel", "SplineBasis", "clip_probs",
    "feature_frame", "fit_hurdle_mean", "fit_nuisance", "fit_penalized_glm",
    "fit_propensity", "nuisance_values", "predict_nuisance",
]
