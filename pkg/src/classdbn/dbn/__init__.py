"""Two-slice Gaussian dynamic Bayesian network."""

from .learn import SearchResult, bic_score, fit_parameters, hill_climb, learn_structure, total_score
from .model import (
    DbnModel,
    LinearGaussianCpd,
    Trajectory,
    forecast,
    forecast_batch,
    joint_log_density,
    load_model,
    neighborhood,
    predict_step,
    save_model,
)
from .structure import T0, T1, DbnStructure, SliceNode, export_dot

__all__ = [
    "T0",
    "T1",
    "DbnModel",
    "DbnStructure",
    "LinearGaussianCpd",
    "SearchResult",
    "SliceNode",
    "Trajectory",
    "bic_score",
    "export_dot",
    "fit_parameters",
    "forecast",
    "forecast_batch",
    "hill_climb",
    "joint_log_density",
    "learn_structure",
    "load_model",
    "neighborhood",
    "predict_step",
    "save_model",
    "total_score",
]
