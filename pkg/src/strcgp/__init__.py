"""Robust spatio-temporal Gaussian processes via weighted Kalman filtering."""

from ._backend import backend_name
from .errors import (
    DegenerateGrid,
    DuplicatePoint,
    GridMismatch,
    InputError,
    InvalidInput,
    InvalidMatrix,
    InvalidShrinkage,
    InvalidStart,
    InvalidTimeStep,
    NotHurwitz,
    NumericalError,
    OptimizationAborted,
    ParseError,
    SingularInnovation,
    SingularMatrix,
    StrcgpError,
    UnsupportedKernel,
)
from .filtering import (
    FilterTrace,
    GaussianState,
    PredictiveMoments,
    SmoothedStates,
    filter_smooth,
    predict,
    predict_at,
    predictive_moments,
    run_filter,
    run_smoother,
    update_gb,
)
from .ssm import KernelSpec, StateSpaceModel, assemble_model, discretize, sde_blocks
from .weights import WeightPolicy, WeightVector, adaptive_weights, imq_weight, summary_weights

__version__ = "0.1.0"

__all__ = [
    "DegenerateGrid", "DuplicatePoint", "FilterTrace", "GaussianState", "GridMismatch", "InputError",
    "InvalidInput", "InvalidMatrix", "InvalidShrinkage", "InvalidStart", "InvalidTimeStep",
    "KernelSpec", "NotHurwitz", "NumericalError", "OptimizationAborted", "ParseError",
    "PredictiveMoments", "SingularInnovation", "SingularMatrix", "SmoothedStates", "StateSpaceModel",
    "StrcgpError", "UnsupportedKernel", "WeightPolicy", "WeightVector", "adaptive_weights",
    "assemble_model", "backend_name", "discretize", "filter_smooth", "imq_weight", "predict",
    "predict_at", "predictive_moments", "run_filter", "run_smoother", "sde_blocks", "summary_weights",
    "update_gb",
]
