"""Heat-kernel analytics and the auxiliary operators used in derivative bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from .errors import ArgumentError, ExtrapolationError


@dataclass(frozen=True)
class HeatParams:
    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ArgumentError("dimension must be positive")


def heat_kernel(t, x, d: int = 1):
    """Gaussian heat kernel (2 pi t)^(-d/2) exp(-|x|^2 / 2t).

    For ``d > 1`` the last axis of ``x`` holds the coordinates.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ArgumentError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    r2 = x * x if d == 1 else np.sum(x * x, axis=-1)
    out = (2 * np.pi * t) ** (-d / 2) * np.exp(-0.5 * r2 / t)
    return float(out) if out.ndim == 0 else out


def erf_diff(a, b):
    """erf(b) - erf(a) without cancellation in the tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    pos = a >= 0
    neg = b <= 0
    out = special.erf(b) - special.erf(a)
    out = np.where(pos, special.erfc(a) - special.erfc(b), out)
    return np.where(neg & ~pos, special.erfc(-b) - special.erfc(-a), out)


def heat_kernel_cell_average(t, x, lo, hi):
    """Average of p_t(x - y) over y in [lo, hi] (d = 1, vectorized)."""
    t = np.asarray(t, dtype=float)
    s = np.sqrt(2.0 * t)
    return 0.5 * erf_diff((lo - x) / s, (hi - x) / s) / (hi - lo)


@dataclass(frozen=True)
class TiltResult:
    lhs: float
    rhs: float


def tilt_check(t, s, a, b) -> TiltResult:
    """Both sides of p_t(a) p_s(b) / p_{t+s}(a+b) = p_{st/(t+s)}(b - s(a+b)/(s+t))."""
    if not (np.all(np.asarray(t) > 0) and np.all(np.asarray(s) > 0)):
        raise ArgumentError("t and s must be positive")
    lhs = heat_kernel(t, a) * heat_kernel(s, b) / heat_kernel(t + s, a + b)
    rhs = heat_kernel(s * t / (t + s), b - s / (s + t) * (a + b))
    return TiltResult(lhs, rhs)


def delta_inc(t, x, xp):
    """Delta_t(x, x') = p_t(x + x') - p_t(x)."""
    return heat_kernel(t, np.add(x, xp)) - heat_kernel(t, x)


def rect_inc(t, x, xp, xpp):
    """R_t(x, x', x'') = p_t(x+x'-x'') - p_t(x+x') - p_t(x-x'') + p_t(x)."""
    x, xp, xpp = (np.asarray(v, dtype=float) for v in (x, xp, xpp))
    # grouped so that xp = 0 or xpp = 0 cancels exactly
    return ((heat_kernel(t, x + xp - xpp) - heat_kernel(t, x - xpp))
            - (heat_kernel(t, x + xp) - heat_kernel(t, x)))


def n_weight(t, x, H0):
    """N_t(x): t^(1/8 - H0/2) |x|^(H0 - 1/4) inside |x| <= sqrt(t), 1 outside."""
    if np.any(np.asarray(t) <= 0):
        raise ArgumentError("t must be positive")
    if not 0.5 <= H0 < 1:
        raise ArgumentError("H0 must lie in [1/2, 1)")
    t = np.asarray(t, dtype=float)
    ax = np.abs(np.asarray(x, dtype=float))
    inner = t ** (0.125 - 0.5 * H0) * ax ** (H0 - 0.25)
    out = np.where(ax <= np.sqrt(t), inner, 1.0)
    return float(out) if out.ndim == 0 else out


def n_weight_integral(t, H1, H0=0.75):
    """Exact value of int N_t(x)^2 |x|^(2H1 - 2) dx.

    Equals 2 t^(H1 - 1/2) [1/(2H0 + 2H1 - 3/2) + 1/(1 - 2H1)], finite iff
    H0 + H1 > 3/4 and H1 < 1/2.
    """
    if not t > 0:
        raise ArgumentError("t must be positive")
    if not 0 < H1 < 0.5:
        raise ArgumentError("H1 must lie in (0, 1/2)")
    if not 0.5 <= H0 < 1:
        raise ArgumentError("H0 must lie in [1/2, 1)")
    if not H0 + H1 > 0.75:
        raise ArgumentError("integral diverges unless H0 + H1 > 3/4")
    return 2 * t ** (H1 - 0.5) * (1 / (2 * H0 + 2 * H1 - 1.5) + 1 / (1 - 2 * H1))


def n_weight_integral_reduced(t, H1):
    """The reduced closed form 4 (1 - H1)/(1 - 2 H1) t^(H1 - 1/2).

    Coincides with :func:`n_weight_integral` only on the line H0 + H1 = 5/4.
    """
    if not 0 < H1 < 0.5:
        raise ArgumentError("H1 must lie in (0, 1/2)")
    return 4 * (1 - H1) / (1 - 2 * H1) * t ** (H1 - 0.5)


# --------------------------------------------------------------------------
# tabulated functions and the Phi / Lambda operators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Tabulated:
    """Function sampled on a uniform grid, linearly interpolated.

    Evaluation outside ``[x0, x0 + (len(values) - 1) * h]`` raises
    :class:`ExtrapolationError`.
    """

    x0: float
    h: float
    values: np.ndarray

    @classmethod
    def from_function(cls, f, lo, hi, n=4001):
        xs = np.linspace(lo, hi, n)
        return cls(lo, xs[1] - xs[0], np.asarray(f(xs), dtype=float))

    @property
    def x1(self) -> float:
        return self.x0 + (len(self.values) - 1) * self.h

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        tol = 1e-12 * max(1.0, abs(self.x0), abs(self.x1))
        if np.any(x < self.x0 - tol) or np.any(x > self.x1 + tol):
            raise ExtrapolationError(f"evaluation outside [{self.x0}, {self.x1}]")
        xs = self.x0 + self.h * np.arange(len(self.values))
        out = np.interp(x, xs, self.values)
        return float(out) if out.ndim == 0 else out


def _constant(c):
    return lambda x: np.full(np.shape(x), c, dtype=float) if np.ndim(x) else float(c)


ONE = _constant(1.0)


@dataclass(frozen=True)
class PhiParams:
    t: float
    shift: float
    beta: float

    def __post_init__(self):
        if not self.t > 0:
            raise ArgumentError("t must be positive")
        if not 0 <= self.beta <= 1:
            raise ArgumentError("beta must lie in [0, 1]")


def phi_operator(t, z, beta) -> Callable[[Callable], Callable]:
    """Phi^beta_{t,z} as a map on functions: g -> (theta_z + I) g or (|z|/sqrt t)^beta g."""
    def apply(g):
        def h(x):
            x = np.asarray(x, dtype=float)
            big = np.abs(z) > np.sqrt(t)
            if np.ndim(big) == 0:
                if big:
                    return g(x + z) + g(x)
                return (abs(z) / math.sqrt(t)) ** beta * g(x)
            small = (np.abs(z) / np.sqrt(t)) ** beta * g(x)
            shifted = g(x + np.where(big, z, 0.0)) + g(x)
            return np.where(big, shifted, small)
        return h
    return apply


def shift_operator(z) -> Callable[[Callable], Callable]:
    """theta_z g = g(. + z)."""
    return lambda g: (lambda x: g(np.asarray(x, dtype=float) + z))


def phi_apply(p: PhiParams, g, x):
    """(Phi^beta_{t,x'} g)(x)."""
    return phi_operator(p.t, p.shift, p.beta)(g)(x)


def lambda_apply(r, zp, s, yp, t, g1, g2, x, y, H0):
    """Lambda_{r,z',s,y'}(g1, g2)(x, y) with Phi = Phi^(H0 - 1/4).

    The terminal time ``t`` enters through Phi_{t-s,-y'}.
    """
    if not 0 < r < s < t:
        raise ArgumentError("need 0 < r < s < t")
    beta = H0 - 0.25
    Phi = lambda tt, zz: phi_operator(tt, zz, beta)  # noqa: E731
    N = n_weight(r, zp, H0)
    a = Phi(s - r, yp)
    b = Phi(s - r, -zp)
    c = Phi(t - s, -yp)
    th = shift_operator(yp)
    return (g1(x) * a(g2)(y) * N
            + g1(x) * a(b(g2))(y)
            + c(g1)(x) * th(g2)(y) * N
            + c(g1)(x) * th(b(g2))(y))


# --------------------------------------------------------------------------
# chaos coefficients
# --------------------------------------------------------------------------


def chaos_kernel(t, x, n, s_vec, y_vec, d: int = 1) -> float:
    """f_{t,x,n}(s, y) = (1/n!) prod of heat kernels chained along sorted times."""
    if n < 1:
        raise ArgumentError("order must be >= 1")
    s = np.asarray(s_vec, dtype=float).reshape(n)
    y = np.asarray(y_vec, dtype=float).reshape((n,) if d == 1 else (n, d))
    if len(np.unique(s)) < n:
        raise ArgumentError("repeated time coordinates; perturb the input")
    if np.any(s <= 0) or np.any(s >= t):
        return 0.0
    order = np.argsort(s)
    s, y = s[order], y[order]
    times = np.append(s, t)
    points = np.concatenate([y, np.asarray(x, dtype=float).reshape((1,) if d == 1 else (1, d))])
    val = 1.0
    for k in range(n):
        val *= heat_kernel(times[k + 1] - times[k], points[k + 1] - points[k], d)
    return val / math.factorial(n)


@dataclass(frozen=True)
class TL1Result:
    max_ratio_delta: float
    max_ratio_rect: float


def tl1_bound_sweep(beta, samples, seed=0) -> TL1Result:
    """Empirical constants in |Delta_t| <= c Phi p_4t and |R_t| <= c Phi Phi p_4t.

    Draws t log-uniformly in [1e-2, 10] and the spatial arguments on the
    scale sqrt(t), so both branches of Phi are exercised.
    """
    if not 0 <= beta <= 1:
        raise ArgumentError("beta must lie in [0, 1]")
    if samples < 1:
        raise ArgumentError("samples must be positive")
    rng = np.random.default_rng(seed)
    t = np.exp(rng.uniform(np.log(1e-2), np.log(10.0), samples))
    st = np.sqrt(t)
    x = rng.normal(0, 3, samples) * st
    xp = rng.normal(0, 1.5, samples) * st
    xpp = rng.normal(0, 1.5, samples) * st
    p4 = lambda z: heat_kernel(4 * t, z)  # noqa: E731
    den_d = phi_operator(t, xp, beta)(p4)(x)
    den_r = phi_operator(t, xp, beta)(phi_operator(t, -xpp, beta)(p4))(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        rd = np.abs(delta_inc(t, x, xp)) / den_d
        rr = np.abs(rect_inc(t, x, xp, xpp)) / den_r
    rd = np.where(np.asarray(xp) == 0, 0.0, rd)
    rr = np.where((xp == 0) | (xpp == 0), 0.0, rr)
    return TL1Result(float(np.max(rd)), float(np.max(rr)))
