"""Variance scaling, normality distances, Poincare quantities and sweeps."""

from .distances import (DistanceReport, distance_report, dtv_bootstrap, dtv_estimate, ks_distance,
                        ks_standard_error, standardize)
from .poincare import (PoincareEstimate, A_regular_exhaustive, A_regular_from_norms, A_regular_sampled,
                       A_rough_from_fields, A_rough_sampled, poincare_A_regular, poincare_A_rough,
                       regular_norms, stein_bound, stein_bound_se)
from .sweeps import SweepResult, md_bound_sweep
from .tables import DISTANCE_FIELDS, SCALING_FIELDS, SWEEP_FIELDS, write_csv, write_long_csv
from .variance import (ScalingFit, ScalingReport, choose_order, exact_variance, fit_scaling_exponent, sample_spatial_average,
                       scaling_report,
                       spatial_average, truncation_order, variance_table)

__all__ = [
    "DistanceReport", "distance_report", "dtv_bootstrap", "dtv_estimate", "ks_distance",
    "ks_standard_error", "standardize", "PoincareEstimate", "A_regular_exhaustive", "A_regular_from_norms",
    "A_regular_sampled", "A_rough_from_fields", "A_rough_sampled", "poincare_A_regular",
    "poincare_A_rough", "regular_norms", "stein_bound", "stein_bound_se", "SweepResult",
    "md_bound_sweep", "DISTANCE_FIELDS", "SCALING_FIELDS", "SWEEP_FIELDS", "write_csv", "write_long_csv", "ScalingFit", "ScalingReport",
    "choose_order", "exact_variance", "fit_scaling_exponent", "sample_spatial_average", "scaling_report", "spatial_average",
    "truncation_order", "variance_table",
]
