from __future__ import annotations

import math

import numpy as np
import pytest

from fbsde_utility.fbsde_assembly import (
    Form,
    assemble,
    assemble_b_form,
    assemble_p_form,
    auto_epsilon,
    driver_residual,
    rescale_epsilon,
)
from fbsde_utility.market_model import make_market
from fbsde_utility.problems import BUNDLED
from fbsde_utility.utility_kernel import make_kappa


def linear_market(theta=(0.3, 0.7), terminal=None):
    return make_market({
        "dim_n": 1, "dim_d1": 1, "dim_d2": 1,
        "tilde_sigma": {"kind": "constant", "value": [[0.0], [0.2]]},
        "theta": {"kind": "constant", "value": list(theta)},
        "terminal_h": terminal or {"kind": "zero"},
    })


@pytest.fixture(scope="module")
def gamma2():
    return make_kappa("linear", gamma=2.0, c=-math.log(2.0))


class TestDrivers:
    def test_p_form_exponential_value(self, gamma2):
        c = assemble_p_form(gamma2, linear_market(), 1.0)
        assert c.driver(0.0, np.zeros(1), 0.0, np.zeros(2)) == pytest.approx(-0.0225)

    def test_b_form_exponential_value(self, gamma2):
        c = assemble_b_form(gamma2, linear_market(), 1.0)
        assert c.driver(0.0, np.zeros(1), 0.0, np.zeros(2)) == pytest.approx(-0.0225)

    def test_b_form_untradable_quadratic_term(self, gamma2):
        c = assemble_b_form(gamma2, linear_market(theta=(0.0, 0.7)), 1.0)
        assert c.driver(0.0, np.zeros(1), 0.0, np.array([0.0, 0.4])) == pytest.approx(0.16)

    def test_zero_risk_price(self):
        u = make_kappa("softplus_blend", a=1.0, b=2.0)
        m = linear_market(theta=(0.0, 0.0))
        p = np.linspace(-5, 5, 11)
        xc = np.zeros((11, 1))
        for form in "PB":
            c = assemble(u, m, form, 1.0)
            np.testing.assert_array_equal(c.driver(0.0, xc, p, np.zeros((11, 2))), 0.0)
            np.testing.assert_array_equal(c.forward_vol_x(0.0, xc, p, np.zeros((11, 2))), 0.0)

    def test_forms_coincide_without_risk_price(self):
        u = make_kappa("softplus_blend", a=1.0, b=2.0)
        m = linear_market(theta=(0.0, 0.0))
        cp, cb = assemble(u, m, "P", 1.0), assemble(u, m, "B", 1.0)
        rng = np.random.default_rng(1)
        xc, p, z = rng.normal(size=(30, 1)), rng.normal(size=30), rng.normal(size=(30, 2))
        np.testing.assert_array_equal(cp.driver(0.0, xc, p, z), cb.driver(0.0, xc, p, z))
        np.testing.assert_array_equal(cp.forward_drift_xtilde(0.0, xc), cb.forward_drift_xtilde(0.0, xc))
        np.testing.assert_array_equal(cp.forward_drift_x(0.0, xc, p, z), cb.forward_drift_x(0.0, xc, p, z))

    def test_residual_vanishes(self):
        prob = BUNDLED["factor_softplus"]
        cp, cb = prob.coefficients("P"), prob.coefficients("B")
        rng = np.random.default_rng(0)
        xc = rng.uniform(-10, 10, (1000, 1))
        p = rng.uniform(-10, 10, 1000)
        z = rng.normal(scale=2.0, size=(1000, 2))
        res = driver_residual(cp, cb, 0.0, xc, p, z)
        np.testing.assert_allclose(res, 0.0, atol=1e-13)

    def test_z_dependence_structure(self):
        prob = BUNDLED["factor_softplus"]
        cp, cb = prob.coefficients("P"), prob.coefficients("B")
        xc, p = np.zeros((1, 1)), np.array([0.2])
        z1, z2 = np.array([[0.5, 0.3]]), np.array([[-0.7, 0.3]])
        # B-form sees only pi2(z)
        np.testing.assert_array_equal(cb.driver(0, xc, p, z1), cb.driver(0, xc, p, z2))
        th1 = cp.theta1(0, xc)
        diff = cp.driver(0, xc, p, z1) - cp.driver(0, xc, p, z2)
        np.testing.assert_allclose(diff, ((z1 - z2) * th1).sum(-1), rtol=1e-14)

    def test_driver_dp_matches_finite_difference(self):
        c = BUNDLED["factor_softplus"].coefficients("P")
        rng = np.random.default_rng(2)
        xc, p, z = rng.normal(size=(40, 1)), rng.uniform(-6, 6, 40), rng.normal(size=(40, 2))
        h = 1e-5
        fd = (c.driver(0.1, xc, p + h, z) - c.driver(0.1, xc, p - h, z)) / (2 * h)
        np.testing.assert_allclose(c.driver_dp(0.1, xc, p, z), fd, rtol=1e-6, atol=1e-9)


class TestForward:
    def test_untradable_volatility_is_zero(self):
        c = BUNDLED["factor_softplus"].coefficients("P")
        vol = c.forward_vol_x(0.0, np.zeros((5, 1)), np.linspace(-1, 1, 5), np.ones((5, 2)))
        np.testing.assert_array_equal(vol[:, 1], 0.0)

    def test_b_form_factor_drift(self):
        prob = BUNDLED["factor_softplus"]
        cp, cb = prob.coefficients("P", 0.5), prob.coefficients("B", 0.5)
        xc = np.array([[1.0]])
        th1 = cp.theta1(0.0, xc)
        sig = cp.market.tilde_sigma(0.0, 0.5 * xc)
        expected = cp.forward_drift_xtilde(0.0, xc) - (th1[..., None] * sig).sum(-2) / 0.5
        np.testing.assert_allclose(cb.forward_drift_xtilde(0.0, xc), expected, rtol=1e-14)
        np.testing.assert_array_equal(cb.forward_drift_x(0.0, xc, np.zeros(1), np.zeros((1, 2))), 0.0)

    def test_scaled_coefficients(self):
        m = make_market({
            "dim_n": 1, "dim_d1": 1, "dim_d2": 1,
            "tilde_mu": {"kind": "affine", "offset": [0.0], "matrix": [[-0.5]]},
            "tilde_sigma": {"kind": "constant", "value": [[0.2], [0.4]]},
            "theta": {"kind": "constant", "value": [0.3, 0.0]},
        })
        c = assemble(make_kappa("linear", gamma=1.0), m, "P", 0.25)
        # mu~(eps xc)/eps = -0.5 xc, independent of eps for a linear drift
        np.testing.assert_allclose(c.forward_drift_xtilde(0.0, np.array([[2.0]])), [[-1.0]])
        np.testing.assert_allclose(c.forward_vol_xtilde(0.0, np.zeros((1, 1))), [[[0.8], [1.6]]])


class TestEpsilon:
    def test_terminal_composition(self):
        m = make_market({
            "dim_n": 1, "dim_d1": 1, "dim_d2": 1,
            "tilde_sigma": {"kind": "constant", "value": [[0.0], [0.2]]},
            "theta": {"kind": "constant", "value": [0.3, 0.0]},
            "terminal_h": {"kind": "linear", "amp_x": 0.0, "amp_xtilde": [1.0]},
        })
        c = assemble(make_kappa("linear", gamma=1.0), m, "P", 0.5)
        assert c.terminal(np.array([2.0]), 0.3) == pytest.approx(1.0)

    def test_rescale_identity(self):
        c = BUNDLED["factor_softplus"].coefficients("P", 1.0)
        c2 = rescale_epsilon(c, 1.0)
        xc = np.linspace(-2, 2, 9)[:, None]
        np.testing.assert_array_equal(c.forward_drift_xtilde(0, xc), c2.forward_drift_xtilde(0, xc))
        np.testing.assert_array_equal(c.terminal(xc, 0.4), c2.terminal(xc, 0.4))

    def test_rescaled_terminal_matches(self):
        c = BUNDLED["factor_softplus"].coefficients("P", 0.4)
        c2 = rescale_epsilon(c, 0.1)
        rng = np.random.default_rng(5)
        xc, x = rng.normal(size=(100, 1)), rng.normal(size=100)
        np.testing.assert_allclose(c2.terminal(xc * 0.4 / 0.1, x), c.terminal(xc, x), rtol=1e-14)

    def test_auto_epsilon(self):
        m = BUNDLED["factor_softplus"].market_spec()
        assert auto_epsilon(m) == pytest.approx(0.1 * 0.5 / 0.3)
        assert auto_epsilon(BUNDLED["sine_softplus"].market_spec()) == 1.0

    def test_invalid_epsilon(self, gamma2):
        with pytest.raises(ValueError):
            assemble(gamma2, linear_market(), "P", 0.0)

    def test_form_enum(self, gamma2):
        assert assemble(gamma2, linear_market(), "B").form is Form.B
