"""Gamma-function bounds, Mittag-Leffler series and gamma-ratio constant searches."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ArgumentError, NumericalError


@dataclass(frozen=True)
class StirlingBounds:
    lower: float
    value: float
    upper: float

    @property
    def holds(self) -> bool:
        return self.lower <= self.value <= self.upper


def stirling_bounds(x) -> StirlingBounds:
    """sqrt(2 pi) x^(x-1/2) e^-x <= Gamma(x) <= the same times e^(1/(12x))."""
    x = float(x)
    if not x > 0:
        raise ArgumentError("x must be positive")
    log_lower = 0.5 * math.log(2 * math.pi) + (x - 0.5) * math.log(x) - x
    return StirlingBounds(math.exp(log_lower), math.gamma(x) if x < 171 else math.inf,
                          math.exp(log_lower + 1.0 / (12.0 * x)))


def log_stirling_bounds(x) -> tuple[float, float, float]:
    """Logarithms of :func:`stirling_bounds`, usable for large x."""
    x = float(x)
    if not x > 0:
        raise ArgumentError("x must be positive")
    log_lower = 0.5 * math.log(2 * math.pi) + (x - 0.5) * math.log(x) - x
    return log_lower, math.lgamma(x), log_lower + 1.0 / (12.0 * x)


@dataclass(frozen=True)
class MLParams:
    """Mittag-Leffler series controls: alpha in (0, 2), relative tolerance, term cap."""

    alpha: float
    tol: float = 1e-16
    max_terms: int = 100_000

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise ArgumentError("alpha must lie in (0, 2)")
        if not self.tol > 0:
            raise ArgumentError("tolerance must be positive")
        if self.max_terms < 1:
            raise ArgumentError("max_terms must be >= 1")


def mittag_leffler(alpha, z, params: MLParams | None = None) -> float:
    """E_alpha(z) = sum_n z^n / Gamma(alpha n + 1) for z >= 0.

    Summation stops once the next term falls below ``tol`` times the
    partial sum; terms are formed in log space to avoid overflow.
    """
    params = params or MLParams(alpha)
    if params.alpha != alpha:
        params = MLParams(alpha, params.tol, params.max_terms)
    z = float(z)
    if z < 0:
        raise ArgumentError("z must be nonnegative")
    if z == 0:
        return 1.0
    logz = math.log(z)
    total = 1.0
    for n in range(1, params.max_terms + 1):
        log_term = n * logz - math.lgamma(alpha * n + 1.0)
        if log_term > 709.0:
            raise NumericalError(f"E_{alpha}({z}) overflows")
        term = math.exp(log_term)
        if term < params.tol * total:
            return total
        total += term
        if not math.isfinite(total):
            raise NumericalError(f"E_{alpha}({z}) overflows")
    raise NumericalError(f"Mittag-Leffler series did not converge in {params.max_terms} terms")


@dataclass(frozen=True)
class ConstantSearch:
    """Constants (c1, c2) of an inequality lhs(n) <= c1 c2^n rhs(n) over a range.

    ``found`` is False when no pair within the caps works; then c1, c2
    are nan.
    """

    c1: float
    c2: float
    found: bool
    form: str = ""


def _search(logf, n, c1_max, c2_max, n_grid=401) -> tuple[float, float, bool]:
    """Smallest c2 on a log grid whose required c1 = max exp(logf - n log c2) is <= c1_max."""
    if not np.all(np.isfinite(logf)):
        return math.nan, math.nan, False
    for log_c2 in np.linspace(0.0, math.log(c2_max), n_grid):
        log_c1 = float(np.max(logf - n * log_c2))
        if log_c1 <= math.log(c1_max):
            return math.exp(max(log_c1, 0.0)), math.exp(log_c2), True
    return math.nan, math.nan, False


def gamma_ratio_check(a1, a2, b1, b2, g1, g2, n_range, form="product", c1_max=1e6,
                      c2_max=1e3) -> ConstantSearch:
    """Search constants for the gamma product or ratio inequality over ``n_range``.

    product: Gamma(a1 n + g1)^b1 Gamma(a2 n + g2)^b2 <= c1 c2^n Gamma((a1 b1 + a2 b2) n + 1)
    ratio:   Gamma(a1 n + g1)^b1 / Gamma(a2 n + g2)^b2 <= c1 c2^n / Gamma((a2 b2 - a1 b1) n + 1)

    Constants are reported, never asserted; c1, c2 are taken >= 1.
    """
    if min(a1, a2, b1, b2) < 0:
        raise ArgumentError("alpha and beta parameters must be nonnegative")
    n = np.asarray(list(n_range), dtype=float)
    if n.size == 0:
        raise ArgumentError("n_range is empty")
    x1, x2 = a1 * n + g1, a2 * n + g2
    if (b1 > 0 and np.any(x1 <= 0)) or (b2 > 0 and np.any(x2 <= 0)):
        return ConstantSearch(math.nan, math.nan, False, form)
    l1 = b1 * special.gammaln(x1) if b1 > 0 else np.zeros_like(n)
    l2 = b2 * special.gammaln(x2) if b2 > 0 else np.zeros_like(n)
    if form == "product":
        logf = l1 + l2 - special.gammaln((a1 * b1 + a2 * b2) * n + 1)
    elif form == "ratio":
        k = a2 * b2 - a1 * b1
        if k <= 0:
            raise ArgumentError("ratio form needs a1 b1 < a2 b2")
        logf = l1 - l2 + special.gammaln(k * n + 1)
    else:
        raise ArgumentError(f"unknown form {form!r}")
    c1, c2, ok = _search(logf, n, c1_max, c2_max)
    return ConstantSearch(c1, c2, ok, form)


def ml_bound_constants(alpha, z_values, params: MLParams | None = None, c1_max=10.0,
                       c2_max=10.0) -> ConstantSearch:
    """Constants with E_alpha(z) <= c1 exp(c2 z^(1/alpha)) on ``z_values``."""
    z = np.asarray(z_values, dtype=float)
    if np.any(z < 0):
        raise ArgumentError("z values must be nonnegative")
    logE = np.array([math.log(mittag_leffler(alpha, zi, params)) for zi in z])
    w = z ** (1.0 / alpha)
    best = None
    for c2 in np.linspace(0.0, c2_max, 1001)[1:]:
        log_c1 = float(np.max(logE - c2 * w))
        if log_c1 <= math.log(c1_max):
            best = (math.exp(max(log_c1, 0.0)), float(c2))
            break
    if best is None:
        return ConstantSearch(math.nan, math.nan, False, "mittag-leffler")
    return ConstantSearch(best[0], best[1], True, "mittag-leffler")
