"""Causal excursion effects for zero-inflated count outcomes in MRT panels."""
from .errors import EstimationError, ExcursionError, InputError
from .estimators import EstimandSpec, EstimateReport, estimate, fit_gee
from .nuisance import NuisanceConfig
from .panel import EffectModelSpec, PanelDataset, load_panel, summarize, write_panel

__version__ = "0.1.0"

__all__ = [
    "EffectModelSpec", "EstimandSpec", "EstimateReport", "EstimationError", "ExcursionError",
    "InputError", "NuisanceConfig", "PanelDataset", "estimate", "fit_gee", "load_panel",
    "summarize", "write_panel",
]
