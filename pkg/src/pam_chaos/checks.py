"""Deterministic identity checks run by the ``kernel-checks`` experiment."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

from .grid import Grid
from .kernels import chaos_kernel, heat_kernel, n_weight, n_weight_integral, tilt_check
from .noise_model import NoiseSpec, SpatialKernel, TemporalKernel, inner_product_H, inner_product_H_spectral
from .special_fn import gamma_ratio_check, mittag_leffler, stirling_bounds


def n_weight_quadrature(t, H1, H0) -> float:
    """int N_t(x)^2 |x|^(2H1-2) dx by adaptive quadrature (algebraic weight near 0)."""
    r = math.sqrt(t)
    expo = 2 * H0 - 0.5 + 2 * H1 - 2
    inner, _ = integrate.quad(lambda x: t ** (0.25 - H0), 0.0, r, weight="alg", wvar=(expo, 0.0))
    outer, _ = integrate.quad(lambda x: n_weight(t, x, H0) ** 2 * x ** (2 * H1 - 2), r, np.inf)
    return 2.0 * (inner + outer)


def _row(name, value, reference, tolerance, relative=True):
    err = abs(value - reference)
    if relative and reference != 0:
        err /= abs(reference)
    return {"name": name, "value": float(value), "reference": float(reference), "error": float(err),
            "tolerance": tolerance, "passed": bool(err <= tolerance)}


def kernel_checks(spec: NoiseSpec | None = None, grid: Grid | None = None, seed: int = 0) -> list[dict]:
    """Closed-form identities, each reported as value, reference, error and pass flag."""
    rng = np.random.default_rng(seed)
    rows = []

    t, s = rng.uniform(0.1, 2.0, (2, 1000))
    a, b = rng.uniform(-2.0, 2.0, (2, 1000))
    res = tilt_check(t, s, a, b)
    rows.append(_row("tilt identity (max rel. error, 1000 draws)",
                     float(np.max(np.abs(res.lhs / res.rhs - 1))), 0.0, 1e-12, relative=False))

    H0 = spec.temporal.hurst if spec is not None and spec.is_rough else 0.75
    for tt, H1 in ((0.5, 0.3), (1.0, 0.3), (2.0, 0.4)):
        if H0 + H1 > 0.75:
            rows.append(_row(f"N_t weight integral t={tt:g} H1={H1:g} H0={H0:g}",
                             n_weight_integral(tt, H1, H0), n_weight_quadrature(tt, H1, H0), 1e-6))

    small = Grid(0.5, 2, 4.0, 8)
    sk = spec.spatial if spec is not None and spec.d == 1 and spec.spatial.spectral_density else \
        SpatialKernel.gaussian_bump(1.0)
    sp = NoiseSpec(TemporalKernel.dirac(), sk)
    phi, psi = rng.standard_normal((2, small.nt, small.n_space))
    rows.append(_row(f"real vs spectral inner product ({sk.label})",
                     inner_product_H(phi, psi, sp, small), inner_product_H_spectral(phi, psi, sp, small), 1e-3))

    xs = rng.uniform(0.1, 50.0, 1000)
    rows.append(_row("Stirling sandwich (violations in 1000 points)",
                     sum(not stirling_bounds(x).holds for x in xs), 0.0, 0.0, relative=False))

    for z in (0.5, 1.0, 2.0):
        ref = math.exp(z * z) * special.erfc(-z)
        rows.append(_row(f"E_1/2({z:g}) vs exp(z^2) erfc(-z)", mittag_leffler(0.5, z), ref, 1e-10))
    rows.append(_row("E_1(1) vs e", mittag_leffler(1.0, 1.0), math.e, 1e-12))

    ratio = gamma_ratio_check(1, 2, 1, 1, 0, 0, range(5, 61), form="ratio")
    prod = gamma_ratio_check(1, 1, 1, 1, 0, 0, range(5, 41), form="product")
    rows.append(_row("gamma ratio constants found (ratio and product forms)",
                     float(ratio.found and prod.found), 1.0, 0.0))

    rows.append(_row("f_{t,x,1} vs heat kernel", chaos_kernel(1.0, 0.3, 1, [0.25], [-0.4]),
                     heat_kernel(0.75, 0.7), 1e-14))
    return rows
