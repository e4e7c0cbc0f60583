"""Markov-switching dynamic matrix factor models.

Simulation, EM estimation with regime filtering/smoothing, evaluation
metrics, and rolling one-step forecasting for matrix-valued time series.
"""

from .model import (
    Dims,
    ModelParams,
    RegimeParams,
    normalize_identification,
    spectral_radius_switching,
    stationary_dist,
    validate,
)
from .simulate import SimConfig, SimOutput, simulate
from .filtering import FilterOutput, filter_pass
from .smoothing import SmoothOutput, smooth_pass
from .em import FitConfig, FitResult, fit, observed_loglik
from .metrics import EvalReport, evaluate, rand_index
from .forecast import ForecastConfig, ForecastReport, predict_one, rolling_eval
from .initialization import build_init

__version__ = "0.1.0"

__all__ = [
    "Dims",
    "ModelParams",
    "RegimeParams",
    "validate",
    "stationary_dist",
    "spectral_radius_switching",
    "normalize_identification",
    "SimConfig",
    "SimOutput",
    "simulate",
    "FilterOutput",
    "filter_pass",
    "SmoothOutput",
    "smooth_pass",
    "FitConfig",
    "FitResult",
    "fit",
    "observed_loglik",
    "EvalReport",
    "evaluate",
    "rand_index",
    "ForecastConfig",
    "ForecastReport",
    "predict_one",
    "rolling_eval",
    "build_init",
]
