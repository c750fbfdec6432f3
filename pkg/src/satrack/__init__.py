"""Tracking analysis of constant step-size stochastic approximation.

Simulate ``x_{k+1} = x_k + a (h(x_k, y_k) + M_{k+1} + eps_{k+1})`` against a
slowly drifting target, decompose the tracking error along the fundamental
matrix of the linearised flow, evaluate the explicit error bounds, and test
the exponential-stability and concentration assumptions on data.
"""

from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    HeavyTailError,
    NumericalError,
    PathCoverageError,
    SatrackError,
    StabilityAssumptionError,
    TargetUnboundedError,
)
from .kernels import BACKEND
from .model import TrackingModel, build_model, linear_drift, linear_rotating, logistic_drift
from .noise import NoiseSpec, PerturbationSpec

__all__ = [
    "BACKEND",
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "HeavyTailError",
    "NoiseSpec",
    "NumericalError",
    "PathCoverageError",
    "PerturbationSpec",
    "SatrackError",
    "StabilityAssumptionError",
    "TargetUnboundedError",
    "TrackingModel",
    "build_model",
    "linear_drift",
    "linear_rotating",
    "logistic_drift",
]

__version__ = "0.1.0"
