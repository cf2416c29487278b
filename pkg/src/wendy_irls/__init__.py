"""Weak-form IRLS parameter estimation for linear-in-parameter ODEs, with a
Monte Carlo harness for coverage and bias studies."""

from .estimator import EstimatorConfig, FitError, WendyFit, confidence_intervals, fit
from .models import BENCHMARKS, ModelSpec, eval_features, get_benchmark, rhs
from .noise import NoiseConfig, NoiseKind, add_noise, calibrate_sigma
from .simulate import StateGrid, integrate, true_grid

__version__ = "0.1.0"

__all__ = [
    "BENCHMARKS",
    "EstimatorConfig",
    "FitError",
    "ModelSpec",
    "NoiseConfig",
    "NoiseKind",
    "StateGrid",
    "WendyFit",
    "add_noise",
    "calibrate_sigma",
    "confidence_intervals",
    "eval_features",
    "fit",
    "get_benchmark",
    "integrate",
    "rhs",
    "true_grid",
]
