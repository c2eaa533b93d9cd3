"""Truncated Wiener-chaos laboratory for the parabolic Anderson model with colored noise."""

__version__ = "0.1.0"

from .errors import (ArgumentError, ExtrapolationError, HypothesisViolation, NumericalError, ResourceError,
                     UnsupportedCaseError)
from .grid import Grid
from .noise_model import NoiseSpec, SpatialKernel, TemporalKernel
from .gaussian_field import build_covariance, make_lattice, sample, sample_batch
from .chaos_engine import (averaged_kernel, chaos_levels, discretize_kernel, multiple_integral,
                           second_moment, solve_u)

__all__ = [
    "__version__", "ArgumentError", "ExtrapolationError", "HypothesisViolation", "NumericalError",
    "ResourceError", "UnsupportedCaseError", "Grid", "NoiseSpec", "SpatialKernel", "TemporalKernel",
    "build_covariance", "make_lattice", "sample", "sample_batch", "averaged_kernel", "chaos_levels",
    "discretize_kernel", "multiple_integral", "second_moment", "solve_u",
]
