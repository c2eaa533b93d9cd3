"""Spatial averages, exact variances and scaling-exponent fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..chaos_engine import (MAX_ORDER, averaged_kernel, averaged_top, chaos_levels, propagator, second_moment_table,
                            tail_certificate)
from ..errors import ArgumentError
from ..gaussian_field import sample_batch
from ..grid import Grid


def spatial_average(t, R, u, grid: Grid):
    """F_R(t) = sum over cells with center in B_R of (u - 1) * cell volume.

    ``u`` holds u(t, .) at the spatial cell centers, shape (n_space,) or
    (B, n_space).
    """
    mask = grid.ball_mask(R)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != grid.n_space:
        raise ArgumentError("u must have one value per spatial cell")
    out = np.sum(u[..., mask] - 1.0, axis=-1) * grid.space_volume
    return float(out) if out.ndim == 0 else out


def exact_variance(t, R, N, grid: Grid, cov) -> float:
    """Var F_R(t) of the expansion truncated at order N (no sampling)."""
    if N < 1:
        raise ArgumentError("N must be >= 1")
    m = second_moment_table(averaged_top(t, R, grid)[None], propagator(grid), cov, N)
    return float(m[0].sum())


def variance_table(t, R_list, nmax, grid: Grid, cov) -> np.ndarray:
    """Second moments E[I_n(F_R)^2], shape (len(R_list), nmax)."""
    tops = np.array([averaged_top(t, R, grid) for R in R_list])
    return second_moment_table(tops, propagator(grid), cov, nmax)


def truncation_order(t, R, grid: Grid, cov, rel_target=1e-3) -> int:
    """Smallest N whose certified relative tail is at most ``rel_target``."""
    return tail_certificate(averaged_kernel(t, R, 1, grid), cov).order_for(rel_target)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float


def fit_scaling_exponent(R_list, var_list) -> ScalingFit:
    """Least-squares fit of log Var against log R."""
    R = np.asarray(R_list, dtype=float)
    v = np.asarray(var_list, dtype=float)
    if R.shape != v.shape or R.size < 3:
        raise ArgumentError("need at least three (R, Var) pairs")
    if np.any(R <= 0) or np.any(v <= 0):
        raise ArgumentError("R and Var must be positive")
    res = stats.linregress(np.log(R), np.log(v))
    return ScalingFit(float(res.slope), float(res.intercept), float(res.rvalue**2))


@dataclass(frozen=True)
class ScalingReport:
    R: np.ndarray
    var_exact: np.ndarray
    var_mc: np.ndarray | None
    var_mc_se: np.ndarray | None
    fit: ScalingFit
    N: int

    def __post_init__(self):
        if np.any(np.diff(self.R) <= 0):
            raise ArgumentError("R values must be strictly increasing")
        if np.any(self.var_exact <= 0):
            raise ArgumentError("exact variances must be positive")

    def rows(self):
        for k, R in enumerate(self.R):
            mc = None if self.var_mc is None else float(self.var_mc[k])
            se = None if self.var_mc_se is None else float(self.var_mc_se[k])
            yield {"R": float(R), "var_exact": float(self.var_exact[k]), "var_mc": mc, "stderr": se}


def order_table(t, R_list, grid: Grid, cov) -> np.ndarray:
    """Second moments per R up to the discrete depth (capped at the engine maximum)."""
    depth = max(1, grid.n_active_times(t))
    return variance_table(t, np.asarray(R_list, dtype=float), min(depth, MAX_ORDER), grid, cov)


def order_from_table(table, rel_target=1e-3) -> int:
    """Smallest N whose dropped levels carry at most ``rel_target`` of each row's total."""
    N = 1
    for row in np.atleast_2d(table):
        tails = np.append(np.cumsum(row[::-1])[::-1], 0.0)
        N = max(N, next(n for n in range(1, len(row) + 1) if tails[n] <= rel_target * row.sum()))
    return N


def choose_order(t, R_list, grid: Grid, cov, rel_target=1e-3) -> int:
    """Truncation order meeting ``rel_target`` for every R in the schedule."""
    return order_from_table(order_table(t, R_list, grid, cov), rel_target)


def scaling_report(t, R_list, grid: Grid, cov, N=None, rel_target=1e-3, samples=None) -> ScalingReport:
    """Exact variances over an R schedule plus the fitted exponent.

    When ``N`` is None the truncation order is the smallest one meeting
    ``rel_target`` for every R.  ``samples``, if given, is an array of
    F_R realizations of shape (B, len(R_list)) used for MC variances.
    """
    R = np.asarray(R_list, dtype=float)
    table = order_table(t, R, grid, cov)
    if N is None:
        N = order_from_table(table, rel_target)
    var = table[:, :N].sum(axis=1) if N <= table.shape[1] else variance_table(t, R, N, grid, cov).sum(axis=1)
    var_mc = se = None
    if samples is not None:
        s = np.asarray(samples, dtype=float)
        var_mc = s.var(axis=0, ddof=1)
        se = var_mc * np.sqrt(2.0 / (s.shape[0] - 1))
    return ScalingReport(R, var, var_mc, se, fit_scaling_exponent(R, var), N)


def sample_spatial_average(t, R_list, N, grid: Grid, lattice, n_samples, seed=0, chunk=500,
                           start=0) -> np.ndarray:
    """Realizations of F_R(t) truncated at order N, shape (n_samples, len(R_list)).

    Replica k (counted from ``start``) uses the noise stream
    ``replica_rng(seed, k)``, so the same seed gives coupled samples
    across R and any split into blocks reproduces the same values.
    """
    kernels = [averaged_kernel(t, R, 1, grid) for R in R_list]
    out = np.empty((n_samples, len(kernels)))
    for a in range(0, n_samples, chunk):
        n = min(chunk, n_samples - a)
        W = sample_batch(lattice, seed, n, start + a)
        for j, k in enumerate(kernels):
            out[a:a + n, j] = chaos_levels(k, N, W, lattice.cov).levels[:, 1:].sum(axis=1)
    return out
