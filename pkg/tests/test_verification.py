from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from fbsde_utility.path_simulator import simulate
from fbsde_utility.problems import BUNDLED
from fbsde_utility.verification import (
    OracleSpec,
    Report,
    degenerate_closure_check,
    epsilon_equivalence_check,
    exponential_oracle,
    form_equivalence_check,
    gradient_bound_check,
    kernel_property_check,
    ladder_indices,
    martingale_diagnostic,
    oracle_error_check,
    write_reports,
)

FIXTURES = Path(__file__).parent / "fixtures"


class TestExponentialOracle:
    def test_reference_values(self):
        y, pi = exponential_oracle(OracleSpec(2.0, (0.3, 0.0)), 0.0)
        assert y == pytest.approx(0.0225, rel=1e-15)
        np.testing.assert_allclose(pi, [0.15, 0.0])

    def test_terminal_time(self):
        assert exponential_oracle(OracleSpec(2.0, (0.3, 0.0), h=0.4), 1.0)[0] == 0.4

    def test_zero_risk_price(self):
        y, pi = exponential_oracle(OracleSpec(3.0, (0.0, 0.0), h=0.1, horizon=2.0), 0.5)
        assert y == 0.1
        assert not pi.any()

    def test_untradable_part_ignored(self):
        y, pi = exponential_oracle(OracleSpec(2.0, (0.3, 0.7)), 0.0)
        assert y == pytest.approx(0.0225)
        assert pi[1] == 0.0

    @pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"horizon": -1.0}, {"d1": 3}])
    def test_invalid(self, kw):
        args = {"gamma": 2.0, "theta": (0.3, 0.0), **kw}
        with pytest.raises(ValueError):
            OracleSpec(**args)

    def test_fine_solve_fixture(self):
        # independent K = 10^4 solve; regenerate with tests/fixtures/make_oracle_fixture.py
        doc = json.loads((FIXTURES / "exponential_fine.json").read_text())
        assert doc["steps"] == 10_000 and doc["status"] == "Converged"
        o = OracleSpec(doc["gamma"], tuple(doc["theta"]), horizon=doc["horizon"])
        y0, _ = exponential_oracle(o, 0.0)
        assert doc["u0_min"] == pytest.approx(y0, rel=1e-10)
        assert doc["u0_max"] == pytest.approx(y0, rel=1e-10)
        assert doc["u_half_mean"] == pytest.approx(exponential_oracle(o, 0.5)[0], rel=1e-10)

    def test_oracle_error_check(self, exponential_p):
        rep = oracle_error_check(exponential_p.field, OracleSpec(2.0, (0.3, 0.0)))
        assert rep.passed and rep.metrics["max_rel_error"] < 1e-12


class TestMartingale:
    def test_ladder(self):
        np.testing.assert_array_equal(ladder_indices(100), [20, 40, 60, 80, 100])

    def test_degenerate_is_exact(self, degenerate_p):
        e = simulate(degenerate_p.field, degenerate_p.coeffs, [0.0], 0.0, 50, seed=0, measure="P")
        rep = martingale_diagnostic(e, degenerate_p.coeffs.kappa)
        assert rep.passed
        assert rep.metrics["z_scores"] == [0.0] * 5

    def test_exponential_under_null(self, exponential_p):
        e = simulate(exponential_p.field, exponential_p.coeffs, [0.0], 0.0, 2000, seed=12, measure="P")
        rep = martingale_diagnostic(e, exponential_p.coeffs.kappa)
        assert rep.passed
        # the log-Euler reconstruction is exact for constant coefficients
        assert rep.metrics["reconstruction_rel_error_max"] < 1e-10

    def test_corrupted_field_flagged_at_horizon(self, exponential_p):
        bad = exponential_p.field.shifted(0.05)
        e = simulate(bad, exponential_p.coeffs, [0.0], 0.0, 2000, seed=12, measure="P")
        rep = martingale_diagnostic(e, exponential_p.coeffs.kappa)
        assert not rep.passed
        z = np.abs(rep.metrics["z_scores"])
        assert z[-1] > 3 and np.all(z[:-1] <= 3)

    def test_requires_w_draws(self, exponential_b):
        e = simulate(exponential_b.field, exponential_b.coeffs, [0.0], 0.0, 5, seed=0, measure="B")
        with pytest.raises(ValueError):
            martingale_diagnostic(e, exponential_b.coeffs.kappa)


class TestFieldChecks:
    def test_gradient_band_sine(self, sine_p):
        rep = gradient_bound_check(sine_p.field, sine_p.coeffs.market)
        assert rep.passed
        assert rep.metrics["max_grad_x"] <= 0.52
        assert 0 < rep.metrics["lower_margin"] < 1

    def test_gradient_band_failures_listed(self, sine_p):
        rep = gradient_bound_check(sine_p.field, sine_p.coeffs.market, tol=-0.01, max_failures=3)
        assert not rep.passed
        assert len(rep.failures) == 3
        assert all(f["grad_x"] > 0.49 for f in rep.failures)

    def test_gradient_band_exponential(self, exponential_p):
        rep = gradient_bound_check(exponential_p.field, exponential_p.coeffs.market)
        assert rep.passed and abs(rep.metrics["max_grad_x"]) < 1e-14

    def test_form_equivalence_degenerate_exact(self):
        rep = form_equivalence_check(BUNDLED["degenerate"])
        assert rep.passed and rep.metrics["max_abs_diff"] == 0.0 and rep.tolerances["max_abs_diff"] == 0.0

    def test_form_equivalence_exponential(self):
        prob = BUNDLED["exponential"]
        rep = form_equivalence_check(prob, prob.build_grid(1.0, steps=20))
        assert rep.passed and rep.metrics["max_abs_diff"] < 1e-14

    def test_epsilon_identity(self):
        prob = BUNDLED["exponential"]
        rep = epsilon_equivalence_check(prob, 0.7, 0.7, prob.build_grid(0.7, steps=10))
        assert rep.metrics["max_abs_diff"] == 0.0

    def test_epsilon_exponential(self):
        prob = BUNDLED["exponential"]
        rep = epsilon_equivalence_check(prob, 1.0, 0.5, prob.build_grid(1.0, steps=20))
        assert rep.metrics["max_abs_diff"] <= 1e-10

    def test_degenerate_closure(self, degenerate_p):
        assert degenerate_closure_check(degenerate_p.field).passed

    def test_degenerate_closure_rejects_nonzero(self, sine_p):
        assert not degenerate_closure_check(sine_p.field).passed


class TestReports:
    def test_kernel_check_small(self):
        rep = kernel_property_check(n_probes=100, n_models=5, seed=3)
        assert rep.passed and rep.metrics["n_probes"] == 100

    def test_json_is_stable(self, tmp_path):
        reps = [Report("a", True, {"x": np.float64(1.5), "v": np.arange(3), "inf": np.inf}, {"t": 1e-3})]
        write_reports(reps, tmp_path / "a.json", {"seed": 1})
        write_reports(reps, tmp_path / "b.json", {"seed": 1})
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        doc = json.loads((tmp_path / "a.json").read_text())
        assert doc["passed"] and doc["checks"][0]["metrics"]["inf"] == "inf"
