"""Fluctuations of intensive operators and decoherence of macroscopic quantum states."""
from . import config
from .errors import FluxdecError
from .fluctuation import (
    AdditiveOperator,
    CovarianceMatrix,
    FluctuationReport,
    additive_variance,
    boson_fluctuation,
    classify_family,
    covariance_matrix,
    max_intensive_fluctuation,
)
from .hilbert import (
    DensityOperator,
    HamiltonianSpec,
    StateVector,
    SystemGeometry,
    evolve,
    linear_entropy,
    make_register,
    partial_trace,
    purity,
)
from .models import ModelSpec, make_state

__version__ = "0.1.0"

__all__ = [
    "AdditiveOperator", "CovarianceMatrix", "DensityOperator", "FluctuationReport",
    "FluxdecError", "HamiltonianSpec", "ModelSpec", "StateVector", "SystemGeometry",
    "additive_variance", "boson_fluctuation", "classify_family", "config", "covariance_matrix",
    "evolve", "linear_entropy", "make_register", "make_state", "max_intensive_fluctuation",
    "partial_trace", "purity",
]
