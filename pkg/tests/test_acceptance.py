"""Acceptance criteria, one PASS/FAIL line each.

Every test prints its verdict line (visible in ``pytest -v`` output even
without ``-s``) and then asserts it, so a FAIL line always comes with a
failing test.
"""

import math

import numpy as np
import pytest
from scipy import special

from pam_chaos.analysis import (choose_order, distance_report, exact_variance, md_bound_sweep,
                                poincare_A_regular, poincare_A_rough, sample_spatial_average, scaling_report,
                                stein_bound, stein_bound_se)
from pam_chaos.chaos_engine import (chaos_levels, discretize_kernel, multiple_integral,
                                    multiple_integral_oracle, product_formula_check, second_moments, symmetrize)
from pam_chaos.checks import n_weight_quadrature
from pam_chaos.gaussian_field import build_covariance, make_lattice, sample_batch
from pam_chaos.grid import Grid
from pam_chaos.kernels import n_weight_integral, tilt_check
from pam_chaos.noise_model import NoiseSpec, SpatialKernel, TemporalKernel, inner_product_H, inner_product_H_spectral
from pam_chaos.special_fn import gamma_ratio_check, mittag_leffler, stirling_bounds

from test_special_fn import ml_oracle

pytestmark = pytest.mark.acceptance

DIRAC = TemporalKernel.dirac()
CASES = {
    "integrable": NoiseSpec(DIRAC, SpatialKernel.gaussian_bump(1.0)),
    "riesz": NoiseSpec(DIRAC, SpatialKernel.riesz(0.5)),
    "rough": NoiseSpec(DIRAC, SpatialKernel.rough_fbm(0.35)),
}
T = 0.5


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def random_cov(rng, M):
    A = rng.standard_normal((M, M))
    return A @ A.T / M + 0.1 * np.eye(M)


# --------------------------------------------------------------------------
# 1-3 variance scaling
# --------------------------------------------------------------------------

SCALING_GRID = Grid(T, 16, 64.0, 512)
SCALING_R = [2.0, 4.0, 8.0, 16.0, 32.0]


@pytest.mark.parametrize("number,case,target", [(1, "integrable", 1.0), (2, "riesz", 1.5), (3, "rough", 1.0)])
def test_variance_scaling(capsys, number, case, target):
    cov = build_covariance(SCALING_GRID, CASES[case])
    rep = scaling_report(T, SCALING_R, SCALING_GRID, cov, rel_target=1e-3)
    slope = rep.fit.slope
    verdict(capsys, number, abs(slope - target) <= 0.15,
            f"{case} Var(F_R) slope {slope:.3f} vs {target} +- 0.15 (N={rep.N})")


# --------------------------------------------------------------------------
# 4 CLT trend
# --------------------------------------------------------------------------

CLT_GRID = Grid(T, 8, 32.0, 256)
CLT_R = [2.0, 4.0, 8.0, 16.0]
CLT_REPLICAS = 10_000


def clt_reports(case):
    lat = make_lattice(CLT_GRID, CASES[case])
    N = choose_order(T, CLT_R, CLT_GRID, lat.cov, 1e-3)
    F = sample_spatial_average(T, CLT_R, N, CLT_GRID, lat, CLT_REPLICAS, seed=2024)
    return [distance_report(F[:, j], R, seed=j, sigma2=exact_variance(T, R, N, CLT_GRID, lat.cov))
            for j, R in enumerate(CLT_R)]


def test_clt_trend(capsys):
    ok, parts = True, []
    for case in CASES:
        reps = clt_reports(case)
        ks = [r.ks for r in reps]
        se = [r.ks_se for r in reps]
        mono = all(ks[j + 1] <= ks[j] + 2 * math.hypot(se[j], se[j + 1]) for j in range(len(ks) - 1))
        final = ks[-1] <= 0.05
        ok &= mono and final
        parts.append(f"{case} KS {' '.join(f'{k:.3f}' for k in ks)} "
                     f"(monotone {'yes' if mono else 'no'}, last <= 0.05 {'yes' if final else 'no'})")
    verdict(capsys, 4, ok, "; ".join(parts))


# --------------------------------------------------------------------------
# 5 Stein-bound consistency
# --------------------------------------------------------------------------

STEIN_GRID = Grid(T, 4, 8.0, 32)


@pytest.mark.parametrize("case", ["integrable", "rough"])
def test_stein_consistency(capsys, case):
    spec = CASES[case]
    lat = make_lattice(STEIN_GRID, spec)
    R = 4.0
    N = choose_order(T, [R], STEIN_GRID, lat.cov, 1e-3)
    sigma2 = exact_variance(T, R, N, STEIN_GRID, lat.cov)
    F = sample_spatial_average(T, [R], N, STEIN_GRID, lat, CLT_REPLICAS, seed=7)[:, 0]
    kind = "rough" if spec.is_rough else "regular"
    if spec.is_rough:
        A = poincare_A_rough(T, R, N, STEIN_GRID, lat, replicas=1000, seed=8, H1=spec.spatial.H1)
    else:
        A = poincare_A_regular(T, R, N, STEIN_GRID, lat, replicas=1000, seed=8)
    sb = stein_bound(sigma2, A.value, kind)
    sb_se = stein_bound_se(sigma2, A.value, A.stderr, kind)
    rep = distance_report(F, R, kind, sigma2=sigma2)
    slack = 3 * math.hypot(rep.ks_se, sb_se)
    verdict(capsys, 5, rep.ks <= sb + slack,
            f"{case} KS {rep.ks:.4f} <= Stein bound {sb:.4f} + 3 se ({slack:.4f})")


# --------------------------------------------------------------------------
# 6 oracle equivalence
# --------------------------------------------------------------------------

def test_oracle_equivalence(capsys):
    rng = np.random.default_rng(6)
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(50):
            M = int(rng.integers(1, 7))
            C = random_cov(rng, M)
            L = np.linalg.cholesky(C)
            Tn = symmetrize(rng.standard_normal((M,) * n))
            xi = rng.standard_normal(M)
            ref = multiple_integral_oracle(Tn, L, xi)
            worst = max(worst, abs(multiple_integral(Tn, L @ xi, C) - ref) / max(1.0, abs(ref)))
    verdict(capsys, 6, worst <= 1e-10, f"max relative deviation {worst:.2e} over 150 instances (<= 1e-10)")


# --------------------------------------------------------------------------
# 7 isometry and hypercontractivity
# --------------------------------------------------------------------------

def test_isometry_hypercontractivity(capsys):
    grid = Grid(0.5, 4, 2.0, 4)
    lat = make_lattice(grid, CASES["rough"])
    n_rep = 100_000
    kernel = discretize_kernel(0.5, 0.1, 1, grid)
    levels = chaos_levels(kernel, 4, sample_batch(lat, 9, n_rep), lat.cov).levels
    exact = second_moments(kernel, lat.cov, 4)
    z_max, ratio_ok, parts = 0.0, True, []
    for n in range(1, 5):
        x = levels[:, n]
        z = abs(np.mean(x**2) - exact[n - 1]) / (np.std(x**2) / math.sqrt(n_rep))
        ratio = np.mean(x**4) ** 0.25 / np.mean(x**2) ** 0.5
        z_max = max(z_max, z)
        ratio_ok &= ratio <= 3 ** (n / 2) * 1.05
        parts.append(f"n={n} z={z:.2f} L4/L2={ratio:.3f}")
    verdict(capsys, 7, z_max <= 5 and ratio_ok, "; ".join(parts))


# --------------------------------------------------------------------------
# 8 product formula
# --------------------------------------------------------------------------

def test_product_formula(capsys):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        C = random_cov(rng, 4)
        res = product_formula_check(rng.standard_normal((4,) * n), rng.standard_normal((4,) * m),
                                    rng.standard_normal(4), C)
        worst = max(worst, abs(res.lhs - res.rhs) / max(1.0, abs(res.lhs)))

    # disjoint temporal supports: no contraction survives
    grid = Grid(1.0, 2, 1.0, 2)
    cov = build_covariance(grid, CASES["rough"])
    f = np.zeros((4, 4))
    f[:2, :2] = rng.standard_normal((2, 2))
    b = np.zeros(4)
    b[2:] = rng.standard_normal(2)
    W = rng.standard_normal(4)
    lhs = multiple_integral(symmetrize(f), W, cov) * multiple_integral(b, W, cov)
    rhs = multiple_integral(symmetrize(np.multiply.outer(f, b)), W, cov)
    disjoint = abs(lhs - rhs) / max(1.0, abs(lhs))
    verdict(capsys, 8, worst <= 1e-9 and disjoint <= 1e-12,
            f"max relative deviation {worst:.2e} over 20 instances, disjoint case {disjoint:.1e}")


# --------------------------------------------------------------------------
# 9 closed-form identities
# --------------------------------------------------------------------------

def test_closed_forms(capsys):
    rng = np.random.default_rng(9)
    t, s = rng.uniform(0.1, 2.0, (2, 1000))
    a, b = rng.uniform(-2.0, 2.0, (2, 1000))
    res = tilt_check(t, s, a, b)
    tilt = float(np.max(np.abs(res.lhs / res.rhs - 1)))

    quad = max(abs(n_weight_integral(tt, H1) / n_weight_quadrature(tt, H1, 0.75) - 1)
               for tt in (0.5, 1.0, 2.0, 4.0) for H1 in (0.1, 0.2, 0.3, 0.4))
    value = n_weight_integral(1.0, 0.3)

    grid = Grid(0.5, 2, 4.0, 8)
    spec = NoiseSpec(DIRAC, SpatialKernel.gaussian_bump(1.0))
    phi, psi = rng.standard_normal((2, grid.nt, grid.n_space))
    real = inner_product_H(phi, psi, spec, grid)
    spectral = inner_product_H_spectral(phi, psi, spec, grid)
    inner = abs(real / spectral - 1)

    ok = tilt <= 1e-12 and quad <= 1e-6 and abs(value - 7.0) <= 1e-6 * 7.0 and inner <= 1e-3
    verdict(capsys, 9, ok, f"tilt {tilt:.1e}; N integral vs quadrature {quad:.1e}; "
            f"N integral at t=1, H1=0.3 is {value:.6f} vs 7.0; real vs spectral {inner:.1e}")


# --------------------------------------------------------------------------
# 10 derivative-bound sweeps
# --------------------------------------------------------------------------

SWEEP_COARSE = Grid(T, 4, 4.0, 32)
SWEEP_FINE = Grid(T, 8, 4.0, 64)


def sweep(grid, spec, N, replicas=200):
    cov = build_covariance(grid, spec)
    return md_bound_sweep(T, 0.0, N, grid, cov, replicas=replicas, n_cells=1000, seed=10,
                          spec=spec if spec.is_rough else None)


@pytest.mark.parametrize("case", ["integrable", "rough"])
def test_derivative_bounds(capsys, case):
    spec = CASES[case]
    coarse, fine = sweep(SWEEP_COARSE, spec, 4), sweep(SWEEP_FINE, spec, 4)
    one = sweep(SWEEP_COARSE, spec, 1, replicas=8)
    parts, ok = [], one.by_family["m1"] == 1.0
    for fam, c in coarse.by_family.items():
        f = fine.by_family[fam]
        fam_ok = bool(np.isfinite(c) and np.isfinite(f) and c <= 10 * f)
        ok &= fam_ok
        parts.append(f"{fam} {c:.3g}/{f:.3g}")
    verdict(capsys, 10, ok, f"{case} coarse/refined max ratios {', '.join(parts)}; "
            f"N=1 ratio {one.by_family['m1']!r}")


# --------------------------------------------------------------------------
# 11 special functions
# --------------------------------------------------------------------------

def test_special_functions(capsys):
    xs = np.random.default_rng(11).uniform(0.1, 50.0, 1000)
    stirling = sum(not stirling_bounds(x).holds for x in xs)

    points = [(a, z) for a in (0.3, 0.5, 0.8, 1.0, 1.5) for z in (0.1, 1.0, 2.0, 5.0)]
    ml = max(abs(mittag_leffler(a, z) / ml_oracle(a, z) - 1) for a, z in points)
    half = abs(mittag_leffler(0.5, 1.0) / (math.e * special.erfc(-1.0)) - 1)

    ratio = gamma_ratio_check(1, 2, 1, 1, 0, 0, range(5, 61), form="ratio")
    prod = gamma_ratio_check(1, 1, 1, 1, 0, 0, range(5, 41), form="product")
    ok = stirling == 0 and max(ml, half) <= 1e-10 and ratio.found and prod.found
    verdict(capsys, 11, ok, f"Stirling violations {stirling}/1000; Mittag-Leffler max rel. error "
            f"{max(ml, half):.1e} at {len(points)} points; gamma ratio found {ratio.found}/{prod.found}")
