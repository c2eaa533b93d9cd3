import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from pam_chaos.checks import n_weight_quadrature
from pam_chaos.errors import ArgumentError, ExtrapolationError
from pam_chaos.kernels import (ONE, PhiParams, Tabulated, chaos_kernel, delta_inc, erf_diff, heat_kernel,
                               heat_kernel_cell_average, lambda_apply, n_weight, n_weight_integral,
                               n_weight_integral_reduced, phi_apply, phi_operator, rect_inc, tilt_check,
                               tl1_bound_sweep)

times = st.floats(0.05, 5.0)
points = st.floats(-4.0, 4.0)


class TestHeatKernel:
    def test_values(self):
        np.testing.assert_allclose(heat_kernel(1.0, 0.0), 1 / math.sqrt(2 * math.pi), rtol=1e-15)
        np.testing.assert_allclose(heat_kernel(0.5, 0.0), 1 / math.sqrt(math.pi), rtol=1e-15)
        np.testing.assert_allclose(heat_kernel(1.0, [0.0, 0.0], d=2), 1 / (2 * math.pi), rtol=1e-15)

    def test_nonpositive_time(self):
        with pytest.raises(ArgumentError):
            heat_kernel(0.0, 1.0)

    @pytest.mark.parametrize("t,s,x", [(0.3, 0.7, 0.2), (1.0, 2.0, -1.5), (0.05, 0.5, 0.0)])
    def test_semigroup(self, t, s, x):
        val, _ = integrate.quad(lambda y: heat_kernel(t, x - y) * heat_kernel(s, y), -np.inf, np.inf)
        np.testing.assert_allclose(val, heat_kernel(t + s, x), rtol=1e-8)

    def test_unit_mass(self):
        val, _ = integrate.quad(lambda y: heat_kernel(0.4, y), -np.inf, np.inf)
        np.testing.assert_allclose(val, 1.0, rtol=1e-10)

    def test_cell_average_matches_quadrature(self):
        for lo, hi in ((-0.3, 0.1), (2.0, 2.5), (-9.0, -8.5)):
            ref, _ = integrate.quad(lambda y: heat_kernel(0.2, 0.1 - y), lo, hi, epsabs=0, epsrel=1e-12)
            np.testing.assert_allclose(heat_kernel_cell_average(0.2, 0.1, lo, hi), ref / (hi - lo), rtol=1e-9)

    def test_erf_diff_far_tail(self):
        # erf(9) - erf(8) cancels to zero in double precision
        from scipy import special
        np.testing.assert_allclose(erf_diff(8.0, 9.0), special.erfc(8.0) - special.erfc(9.0), rtol=1e-14)
        np.testing.assert_allclose(erf_diff(-9.0, -8.0), erf_diff(8.0, 9.0), rtol=1e-14)
        assert erf_diff(8.0, 9.0) > 0


class TestTilt:
    def test_unit_example(self):
        res = tilt_check(1.0, 1.0, 1.0, 1.0)
        np.testing.assert_allclose([res.lhs, res.rhs], 1 / math.sqrt(math.pi), rtol=1e-14)

    def test_zero_case(self):
        res = tilt_check(2.0, 3.0, 0.0, 0.0)
        np.testing.assert_allclose([res.lhs, res.rhs], heat_kernel(6 / 5, 0.0), rtol=1e-14)

    def test_example(self):
        res = tilt_check(2.0, 3.0, 0.7, -1.1)
        np.testing.assert_allclose(res.lhs, res.rhs, rtol=1e-12)

    def test_random_draws(self):
        rng = np.random.default_rng(11)
        t, s = rng.uniform(0.05, 3.0, (2, 1000))
        a, b = rng.uniform(-3.0, 3.0, (2, 1000))
        res = tilt_check(t, s, a, b)
        np.testing.assert_allclose(res.lhs, res.rhs, rtol=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ArgumentError):
            tilt_check(-1.0, 1.0, 0.0, 0.0)


class TestIncrements:
    def test_delta_value(self):
        np.testing.assert_allclose(delta_inc(1.0, 0.0, 1.0), (math.exp(-0.5) - 1) / math.sqrt(2 * math.pi),
                                   rtol=1e-14)
        np.testing.assert_allclose(delta_inc(1.0, 0.0, 1.0), -0.156972, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(times, points, points)
    def test_delta_identities(self, t, x, xp):
        assert delta_inc(t, x, 0.0) == 0.0
        np.testing.assert_allclose(delta_inc(t, x, xp), -delta_inc(t, x + xp, -xp), atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(times, points, points)
    def test_rect_vanishes(self, t, x, xpp):
        assert rect_inc(t, x, 0.0, xpp) == 0.0
        assert rect_inc(t, x, xpp, 0.0) == 0.0

    def test_rect_value(self):
        p = lambda z: heat_kernel(1.0, z)  # noqa: E731
        np.testing.assert_allclose(rect_inc(1.0, 0.0, 1.0, 1.0), 2 * p(0) - 2 * p(1), rtol=1e-14)

    def test_rect_is_difference_of_deltas(self):
        t, x, xp, xpp = 0.7, 0.3, -0.4, 1.1
        np.testing.assert_allclose(rect_inc(t, x, xp, xpp), delta_inc(t, x - xpp, xp) - delta_inc(t, x, xp),
                                   rtol=1e-13)


class TestNWeight:
    def test_values(self):
        assert n_weight(1.0, 2.0, 0.75) == 1.0
        assert n_weight(1.0, 0.0, 0.75) == 0.0
        np.testing.assert_allclose(n_weight(4.0, 1.0, 0.75), 1 / math.sqrt(2), rtol=1e-14)

    def test_continuous_at_boundary(self):
        for H0 in (0.5, 0.75, 0.9):
            np.testing.assert_allclose(n_weight(2.0, math.sqrt(2.0), H0), 1.0, rtol=1e-14)

    def test_arguments(self):
        with pytest.raises(ArgumentError):
            n_weight(0.0, 1.0, 0.75)
        with pytest.raises(ArgumentError):
            n_weight(1.0, 1.0, 0.4)


class TestNWeightIntegral:
    @pytest.mark.parametrize("t,H1,H0", [(1.0, 0.3, 0.75), (4.0, 0.3, 0.75), (0.5, 0.25, 0.75),
                                         (2.0, 0.45, 0.6), (1.0, 0.3, 0.95), (3.0, 0.1, 0.9)])
    def test_matches_quadrature(self, t, H1, H0):
        np.testing.assert_allclose(n_weight_integral(t, H1, H0), n_weight_quadrature(t, H1, H0), rtol=1e-6)

    def test_quadrature_by_direct_integration(self):
        f = lambda x: n_weight(1.0, x, 0.75) ** 2 * abs(x) ** (2 * 0.3 - 2)  # noqa: E731
        inner, _ = integrate.quad(f, 0, 1)
        outer, _ = integrate.quad(f, 1, np.inf)
        np.testing.assert_allclose(2 * (inner + outer), n_weight_integral(1.0, 0.3, 0.75), rtol=1e-6)

    def test_reduced_form_values(self):
        np.testing.assert_allclose(n_weight_integral_reduced(1.0, 0.3), 7.0, rtol=1e-14)
        np.testing.assert_allclose(n_weight_integral_reduced(1.0, 0.25), 6.0, rtol=1e-14)

    @pytest.mark.parametrize("H1", [0.3, 0.35, 0.45])
    def test_reduced_form_on_its_line(self, H1):
        np.testing.assert_allclose(n_weight_integral_reduced(2.0, H1), n_weight_integral(2.0, H1, 1.25 - H1),
                                   rtol=1e-14)

    def test_scaling_in_t(self):
        np.testing.assert_allclose(n_weight_integral(4.0, 0.3) / n_weight_integral(1.0, 0.3), 4 ** -0.2,
                                   rtol=1e-14)

    def test_arguments(self):
        with pytest.raises(ArgumentError):
            n_weight_integral(1.0, 0.5)
        with pytest.raises(ArgumentError):
            n_weight_integral(1.0, 0.2, 0.5)


class TestTabulated:
    def test_interpolates(self):
        g = Tabulated.from_function(np.sin, 0.0, 3.0, n=30001)
        np.testing.assert_allclose(g(1.234), math.sin(1.234), atol=1e-8)

    def test_refuses_extrapolation(self):
        g = Tabulated.from_function(np.cos, 0.0, 1.0)
        with pytest.raises(ExtrapolationError):
            g(1.5)


class TestPhi:
    def test_large_shift(self):
        assert phi_apply(PhiParams(1.0, 2.0, 0.5), ONE, 0.3) == 2.0

    def test_small_shift(self):
        np.testing.assert_allclose(phi_apply(PhiParams(4.0, 1.0, 0.5), ONE, 0.0), math.sqrt(0.5), rtol=1e-14)

    def test_tabulated_argument_out_of_range(self):
        g = Tabulated.from_function(np.ones_like, -1.0, 1.0)
        with pytest.raises(ExtrapolationError):
            phi_apply(PhiParams(1.0, 2.0, 0.5), g, 0.0)

    def test_params(self):
        with pytest.raises(ArgumentError):
            PhiParams(0.0, 1.0, 0.5)
        with pytest.raises(ArgumentError):
            PhiParams(1.0, 1.0, 1.5)

    @pytest.mark.parametrize("z", [0.3, 2.5])
    def test_mass_identity(self, z):
        # integral of Phi g against dx is (|z|/sqrt t)^beta or 2 times the mass of g
        g = lambda x: heat_kernel(1.0, x)  # noqa: E731
        h = phi_operator(1.0, z, 0.5)(g)
        val, _ = integrate.quad(h, -np.inf, np.inf)
        expect = 2.0 if z > 1 else math.sqrt(z)
        np.testing.assert_allclose(val, expect, rtol=1e-6)

    def test_vectorized_shift(self):
        z = np.array([0.5, 3.0])
        out = phi_operator(1.0, z, 1.0)(ONE)(np.zeros(2))
        np.testing.assert_allclose(out, [0.5, 2.0])


class TestLambda:
    def test_all_large_shifts(self):
        assert lambda_apply(1.0, 3.0, 3.0, 3.0, 4.0, ONE, ONE, 0.0, 0.0, 0.75) == 12.0

    def test_zero_functions(self):
        zero = lambda x: 0.0 * np.asarray(x, dtype=float)  # noqa: E731
        assert lambda_apply(1.0, 0.5, 2.0, 0.5, 3.0, zero, zero, 0.1, 0.2, 0.75) == 0.0

    def test_time_ordering(self):
        with pytest.raises(ArgumentError):
            lambda_apply(2.0, 1.0, 1.0, 1.0, 4.0, ONE, ONE, 0.0, 0.0, 0.75)

    def test_mass_identity(self):
        g = lambda x: heat_kernel(1.0, x)  # noqa: E731
        val, _ = integrate.dblquad(lambda y, x: lambda_apply(1.0, 3.0, 3.0, 3.0, 4.0, g, g, x, y, 0.75),
                                   -12, 12, -12, 12, epsabs=1e-10)
        np.testing.assert_allclose(val, 12.0, rtol=1e-6)


class TestChaosKernel:
    def test_first_order(self):
        np.testing.assert_allclose(chaos_kernel(1.0, 0.0, 1, [0.5], [0.2]), heat_kernel(0.5, -0.2), rtol=1e-15)
        np.testing.assert_allclose(chaos_kernel(1.0, 0.0, 1, [0.5], [0.2]), 0.542067, atol=1e-6)

    def test_second_order(self):
        ref = 0.5 * heat_kernel(0.5, 0.2) * heat_kernel(0.25, -0.1)
        np.testing.assert_allclose(chaos_kernel(1.0, 0.0, 2, [0.25, 0.75], [0.1, -0.1]), ref, rtol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(range(4)), st.integers(0, 2**32 - 1))
    def test_permutation_symmetry(self, perm, seed):
        rng = np.random.default_rng(seed)
        s = rng.uniform(0, 1, 4)
        y = rng.normal(size=4)
        p = list(perm)
        assert chaos_kernel(1.0, 0.2, 4, s, y) == chaos_kernel(1.0, 0.2, 4, s[p], y[p])

    def test_explicit_chain(self):
        s = np.array([0.1, 0.4, 0.6])
        y = np.array([0.3, -0.2, 0.5])
        ref = heat_kernel(0.3, -0.5) * heat_kernel(0.2, 0.7) * heat_kernel(0.4, -0.5) / 6
        np.testing.assert_allclose(chaos_kernel(1.0, 0.0, 3, s, y), ref, rtol=1e-14)

    def test_outside_support(self):
        assert chaos_kernel(1.0, 0.0, 2, [0.5, 1.0], [0.0, 0.0]) == 0.0
        assert chaos_kernel(1.0, 0.0, 1, [0.0], [0.0]) == 0.0

    def test_repeated_times(self):
        with pytest.raises(ArgumentError):
            chaos_kernel(1.0, 0.0, 2, [0.5, 0.5], [0.0, 1.0])

    def test_two_dimensional(self):
        val = chaos_kernel(1.0, [0.0, 0.0], 1, [0.5], [[0.1, 0.2]], d=2)
        np.testing.assert_allclose(val, heat_kernel(0.5, [-0.1, -0.2], d=2), rtol=1e-15)


class TestTL1Sweep:
    def test_ratios_finite(self):
        for beta in (0.0, 0.5, 1.0):
            res = tl1_bound_sweep(beta, 20000, seed=1)
            assert np.isfinite(res.max_ratio_delta) and np.isfinite(res.max_ratio_rect)

    def test_beta_zero_constant(self):
        assert tl1_bound_sweep(0.0, 100000, seed=2).max_ratio_delta <= 4.0

    def test_deterministic(self):
        assert tl1_bound_sweep(0.5, 1000, seed=3) == tl1_bound_sweep(0.5, 1000, seed=3)

    def test_arguments(self):
        with pytest.raises(ArgumentError):
            tl1_bound_sweep(1.5, 10)
        with pytest.raises(ArgumentError):
            tl1_bound_sweep(0.5, 0)
