from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsde_utility.errors import InvalidFamilyParams
from fbsde_utility.utility_kernel import (
    make_kappa,
    marginal_utility,
    phi,
    quotients,
    second_derivative,
    tail_length,
    validate_c1,
)
from fbsde_utility.verification import trapezoid_phi


@pytest.fixture(scope="module")
def blend():
    return make_kappa("softplus_blend", a=1.0, b=2.0, s=1.0, x0=0.0)


@pytest.fixture(scope="module")
def linear():
    return make_kappa("linear", gamma=2.0, c=-math.log(2.0))


class TestFamilies:
    def test_linear_is_exponential_utility(self, linear):
        x = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(linear.kappa(x), 2 * x - math.log(2.0))
        np.testing.assert_array_equal(linear.kappa_prime(x), 2.0)
        np.testing.assert_array_equal(linear.kappa_second(x), 0.0)
        # U'' = -exp(-kappa) = -2 exp(-2x)
        np.testing.assert_allclose(second_derivative(linear, x), -2.0 * np.exp(-2 * x), rtol=1e-14)

    def test_softplus_blend_slope(self, blend):
        x = np.arange(-10, 11, dtype=float)
        np.testing.assert_allclose(blend.kappa_prime(x), 1 + 1 / (1 + np.exp(-x)), rtol=1e-14)
        assert np.all(blend.kappa_prime(x) > 1) and np.all(blend.kappa_prime(x) < 2)
        assert np.all(blend.kappa_second(x) > 0)
        assert blend.kappa_second_sup == pytest.approx(0.25)

    def test_softplus_kappa_matches_integrated_slope(self, blend):
        # kappa(x) - kappa(0) = int_0^x kappa'
        xs = np.linspace(0, 4, 4001)
        integral = np.trapezoid(blend.kappa_prime(xs), xs)
        assert blend.kappa(4.0) - blend.kappa(0.0) == pytest.approx(integral, rel=1e-7)

    @pytest.mark.parametrize(
        "family, params",
        [
            ("linear", {"gamma": -1.0}),
            ("linear", {"gamma": 0.0}),
            ("softplus_blend", {"a": 0.0, "b": 1.0}),
            ("softplus_blend", {"a": 2.0, "b": 1.0}),
            ("softplus_blend", {"a": 1.0, "b": 2.0, "s": -1.0}),
            ("softplus_blend", {"a": 1.0}),
            ("linear", {"gamma": 1.0, "beta": 3.0}),
            ("tabulated", {"knots": [0, 1], "values": [0, 1]}),
            ("tabulated", {"knots": [0, 2, 1], "values": [0, 1, 2]}),
            ("tabulated", {"knots": [0, 1, 2], "values": [0, -1, -2]}),
            ("cubic", {}),
        ],
    )
    def test_invalid_params(self, family, params):
        with pytest.raises(InvalidFamilyParams):
            make_kappa(family, **params)

    def test_tabulated_linear_data_is_exponential(self):
        knots = np.linspace(-5, 5, 11)
        m = make_kappa("tabulated", knots=knots.tolist(), values=(1.5 * knots).tolist())
        assert m.kappa_prime_inf == pytest.approx(1.5)
        assert m.kappa_prime_sup == pytest.approx(1.5)
        np.testing.assert_allclose(phi(m, np.linspace(-8, 8, 9)), -1 / 1.5, rtol=1e-10)

    def test_tail_length(self):
        assert tail_length(1.0, 1e-13) == pytest.approx(math.log(1e13))
        # the truncated mass exp(-a L)/a is at the tolerance
        a = 0.3
        assert math.exp(-a * tail_length(a, 1e-13)) / a == pytest.approx(1e-13)
        assert tail_length(100.0) == 1.0


class TestPhi:
    def test_linear_value(self, linear):
        assert phi(linear, 5.0) == -0.5

    def test_blend_against_dense_trapezoid(self, blend):
        # 10^6-node trapezoid on a long interval, independent of the Gauss-Legendre rule
        s = np.linspace(0.0, 40.0, 1_000_001)
        ref = -np.trapezoid(np.exp(-blend.family.kappa_diff(0.0, s)), s)
        val = phi(blend, 0.0)
        assert -1.0 < val < -0.5
        assert val == pytest.approx(ref, rel=1e-9)

    def test_blend_against_richardson_oracle(self, blend):
        x = np.linspace(-15, 15, 31)
        np.testing.assert_allclose(phi(blend, x), trapezoid_phi(blend, x), rtol=1e-10)

    def test_refinement_agrees(self, blend):
        x = np.linspace(-5, 5, 21)
        np.testing.assert_allclose(phi(blend, x, tol=1e-14), phi(blend, x), rtol=1e-12)

    def test_limits(self, blend):
        # far left kappa' -> a so phi -> -1/a; far right kappa' -> b
        assert phi(blend, -60.0) == pytest.approx(-1.0, rel=1e-12)
        assert phi(blend, 60.0) == pytest.approx(-0.5, rel=1e-12)

    def test_shape(self, blend):
        assert isinstance(phi(blend, 0.3), float)
        assert phi(blend, np.zeros((2, 3))).shape == (2, 3)

    @settings(max_examples=40, deadline=None)
    @given(
        a=st.floats(0.2, 3.0),
        gap=st.floats(0.0, 3.0),
        s=st.floats(0.1, 5.0),
        x=st.floats(-20, 20),
    )
    def test_bounds_property(self, a, gap, s, x):
        m = make_kappa("softplus_blend", a=a, b=a + gap, s=s)
        v = phi(m, x)
        tol = 1e-11 / a
        assert -1 / m.kappa_prime_inf - tol <= v <= -1 / m.kappa_prime_sup + tol


class TestQuotients:
    def test_linear_example(self, linear):
        q = quotients(linear, 0.0)
        assert q.phi == -0.5
        assert q.neg_kappa_prime == -2.0
        assert q.drift_coeff == pytest.approx(-0.25)
        assert q.phi * q.inv_phi == 1.0

    def test_identities_against_finite_differences(self, blend):
        p = np.linspace(-4, 4, 17)
        h = 1e-5
        u2 = second_derivative(blend, p)
        u1 = marginal_utility(blend, p)
        q = quotients(blend, p)
        # U'''/U'' = -kappa'
        du2 = (second_derivative(blend, p + h) - second_derivative(blend, p - h)) / (2 * h)
        np.testing.assert_allclose(du2 / u2, q.neg_kappa_prime, rtol=1e-8)
        # (U')' = U''
        du1 = (marginal_utility(blend, p + h) - marginal_utility(blend, p - h)) / (2 * h)
        np.testing.assert_allclose(du1, u2, rtol=1e-8)
        np.testing.assert_allclose(q.phi, u1 / u2, rtol=1e-14)
        # slope of the drift coefficient
        dd = (quotients(blend, p + h).drift_coeff - quotients(blend, p - h).drift_coeff) / (2 * h)
        np.testing.assert_allclose(q.drift_coeff_slope, dd, rtol=1e-6, atol=1e-10)

    def test_monotonicity(self, blend):
        p = np.linspace(-12, 12, 2401)
        q = quotients(blend, p)
        assert np.all(np.diff(q.drift_coeff) >= -1e-12)
        assert np.all(np.diff(q.neg_kappa_prime) <= 1e-12)

    def test_neg_kappa_prime_range(self, blend):
        q = quotients(blend, np.linspace(-30, 30, 101))
        assert np.all(q.neg_kappa_prime <= -1.0) and np.all(q.neg_kappa_prime >= -2.0)


class TestMarginalUtility:
    def test_linear_closed_form(self, linear):
        assert marginal_utility(linear, 0.0) == pytest.approx(1.0)
        p = np.linspace(-2, 2, 5)
        np.testing.assert_allclose(marginal_utility(linear, p), np.exp(-2 * p), rtol=1e-14)

    def test_decreasing_and_positive(self, blend):
        assert marginal_utility(blend, 1.0) < marginal_utility(blend, 0.0)
        assert np.all(marginal_utility(blend, np.linspace(-20, 20, 41)) > 0)

    def test_phi_times_second_derivative(self, blend):
        p = np.random.default_rng(3).uniform(-10, 10, 100)
        np.testing.assert_allclose(phi(blend, p) * second_derivative(blend, p), marginal_utility(blend, p), rtol=1e-14)


class TestValidateC1:
    def test_linear_passes(self, linear):
        assert validate_c1(linear, np.linspace(-20, 20, 401)).passed

    def test_blend_passes_with_slope_range(self, blend):
        x = np.linspace(-20, 20, 401)
        rep = validate_c1(blend, x)
        assert rep.passed
        kp = blend.kappa_prime(x)
        assert 1 < kp.min() and kp.max() < 2

    def test_tabulated_negative_curvature_fails(self):
        # convex data with a kink pushes the natural spline below zero curvature
        knots = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]
        values = [-3.0, -2.0, -1.0, 0.0, 2.0, 4.0, 6.0]
        m = make_kappa("tabulated", knots=knots, values=values)
        rep = validate_c1(m, np.linspace(-6, 6, 1201))
        assert not rep.passed
        assert "kappa'' >= 0" in [c.name for c in rep.failures]
        assert rep["kappa'' >= 0"].observed < 0

    def test_report_never_raises_on_bad_declaration(self, blend):
        import dataclasses

        lied = dataclasses.replace(blend, kappa_prime_sup=1.5)
        rep = validate_c1(lied, np.linspace(-10, 10, 201))
        assert not rep.passed
        assert rep["kappa' <= sup kappa'"].worst_point > 0
