"""Conditional normalizing flows for probabilistic forecasting of bounded series."""
from .baselines import EmpiricalDist, climatology_quantile, mupen_sample
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import DataError, SupervisedSet, load_csv, make_case, split
from .estimators import ClimatologyForecaster, FlowForecaster, MuPEnForecaster, load_model, save_model
from .flow import ConditionalFlow, FlowConfig, make_affine_flow, make_logit_flow, make_spline_flow
from .metrics import (
    crps_from_quantiles,
    crps_quadrature,
    crps_samples,
    energy_score,
    pi_width,
    reliability,
    variogram_score,
)
from .training import NumericalError, TrainConfig, fit

__all__ = [
    "ClimatologyForecaster",
    "ConditionalFlow",
    "ConfigError",
    "DataError",
    "EmpiricalDist",
    "FlowConfig",
    "FlowForecaster",
    "MuPEnForecaster",
    "NumericalError",
    "RunConfig",
    "SupervisedSet",
    "TrainConfig",
    "climatology_quantile",
    "crps_from_quantiles",
    "crps_quadrature",
    "crps_samples",
    "energy_score",
    "fit",
    "load_config",
    "load_csv",
    "load_model",
    "make_affine_flow",
    "make_case",
    "make_logit_flow",
    "make_spline_flow",
    "mupen_sample",
    "parse_config",
    "pi_width",
    "reliability",
    "save_model",
    "split",
    "variogram_score",
]
__version__ = "0.1.0"
