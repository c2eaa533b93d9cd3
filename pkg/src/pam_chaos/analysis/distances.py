"""Distances between an empirical law and the standard normal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from ..errors import ArgumentError


def ks_distance(samples) -> float:
    """sup_x |F_n(x) - Phi(x)|."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ArgumentError("KS distance needs at least 100 samples")
    return float(stats.kstest(x, "norm").statistic)


def ks_standard_error(samples, n_boot=200, seed=0) -> float:
    """Bootstrap standard error of :func:`ks_distance`."""
    x = np.asarray(samples, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    boots = [ks_distance(rng.choice(x, x.size)) for _ in range(n_boot)]
    return float(np.std(boots, ddof=1))


def dtv_estimate(samples, n_grid=4001) -> float:
    """(1/2) int |f_hat - phi| over [-8, 8] with a Silverman-bandwidth KDE."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 1000:
        raise ArgumentError("dTV estimate needs at least 1000 samples")
    grid = np.linspace(-8.0, 8.0, n_grid)
    if np.std(x) == 0:
        return 1.0
    kde = stats.gaussian_kde(x, bw_method="silverman")
    val = 0.5 * trapezoid(np.abs(kde(grid) - stats.norm.pdf(grid)), grid)
    return float(min(max(val, 0.0), 1.0))


def dtv_bootstrap(samples, n_boot=50, seed=0, level=0.95):
    """Bootstrap percentile interval for :func:`dtv_estimate`."""
    x = np.asarray(samples, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    boots = np.array([dtv_estimate(rng.choice(x, x.size)) for _ in range(n_boot)])
    a = (1 - level) / 2
    return float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a))


@dataclass(frozen=True)
class DistanceReport:
    R: float
    n_samples: int
    ks: float
    ks_se: float
    dtv: float
    stein_bound: float | None = None
    stein_bound_se: float | None = None
    case: str = "regular"

    def __post_init__(self):
        if not (0 <= self.ks <= 1 and 0 <= self.dtv <= 1):
            raise ArgumentError("distances must lie in [0, 1]")

    def row(self) -> dict:
        return {"R": self.R, "n_samples": self.n_samples, "KS": self.ks, "KS_se": self.ks_se,
                "dTV": self.dtv, "stein_bound": self.stein_bound, "case": self.case}


def standardize(samples, sigma2=None) -> np.ndarray:
    """F / sigma, with sigma from ``sigma2`` or the sample standard deviation.

    F_R(t) is centered, so no mean is subtracted.
    """
    x = np.asarray(samples, dtype=float)
    if sigma2 is None:
        sigma2 = float(np.var(x, ddof=1))
    if not sigma2 > 0:
        raise ArgumentError("variance must be positive")
    return x / np.sqrt(sigma2)


def distance_report(samples, R, case="regular", seed=0, stein=None, stein_se=None,
                    sigma2=None) -> DistanceReport:
    """KS and dTV of ``samples / sigma`` against N(0, 1)."""
    x = standardize(np.ravel(samples), sigma2)
    return DistanceReport(float(R), int(x.size), ks_distance(x), ks_standard_error(x, seed=seed),
                          dtv_estimate(x), stein, stein_se, case)
