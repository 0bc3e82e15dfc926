"""Bundled problem set used by the tests, the demos and the acceptance run.

Each entry is a plain configuration fragment (the ``utility`` and ``market``
sections of a run configuration) plus a suggested grid, so the same problems
can be written to disk and replayed through the command line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .decoupling_solver import Grid, build_grid
from .fbsde_assembly import FbsdeCoefficients, assemble, auto_epsilon
from .market_model import MarketSpec, make_market
from .utility_kernel import KappaModel, make_kappa


@dataclass(frozen=True)
class Problem:
    name: str
    utility: dict
    market: dict
    grid: dict

    def kappa(self) -> KappaModel:
        return make_kappa(**self.utility)

    def market_spec(self) -> MarketSpec:
        return make_market(self.market)

    def coefficients(self, form: str = "P", eps: float | None = None) -> FbsdeCoefficients:
        return assemble(self.kappa(), self.market_spec(), form, eps)

    def build_grid(
        self, eps: float | None = None, steps: int | None = None, x_count: int | None = None, **overrides
    ) -> Grid:
        """Grid in scaled factor coordinates: factor bounds are given in x~ units and divided by ``eps``."""
        spec = dict(self.grid)
        spec.update(overrides)
        if steps is not None:
            spec["steps"] = steps
        if x_count is not None:
            spec["x_count"] = x_count
        m = self.market_spec()
        eps = auto_epsilon(m) if eps is None else eps
        vol = m.theta_sup / self.kappa().kappa_prime_inf
        return build_grid(
            horizon=m.horizon,
            steps=spec["steps"],
            x_bounds=tuple(spec["x_bounds"]),
            x_count=spec["x_count"],
            xt_bounds=[(lo / eps, hi / eps) for lo, hi in spec["xt_bounds"]],
            xt_counts=spec["xt_counts"],
            quad_nodes=spec["quad_nodes"],
            dim_d=m.dim_d,
            x0=spec.get("x0"),
            vol_bound=vol,
        )


_ZERO_FACTOR = {
    "tilde_mu": {"kind": "constant", "value": [0.0]},
    "tilde_sigma": {"kind": "constant", "value": [[0.0], [0.0]]},
}

_SMALL_GRID = {
    "steps": 100,
    "x_bounds": [-5.0, 5.0],
    "x_count": 201,
    "xt_bounds": [[-1.0, 1.0]],
    "xt_counts": [3],
    "quad_nodes": 8,
    "x0": 0.0,
}

# gamma = 2, c = -ln 2 gives U(x) = -exp(-2x)/2 and U'(x) = exp(-2x)
EXPONENTIAL = Problem(
    "exponential",
    {"family": "linear", "gamma": 2.0, "c": -math.log(2.0)},
    {
        "dim_n": 1, "dim_d1": 1, "dim_d2": 1, "horizon": 1.0,
        "tilde_mu": {"kind": "constant", "value": [0.0]},
        "tilde_sigma": {"kind": "constant", "value": [[0.0], [0.2]]},
        "theta": {"kind": "constant", "value": [0.3, 0.0]},
        "terminal_h": {"kind": "zero"},
    },
    _SMALL_GRID,
)

DEGENERATE = Problem(
    "degenerate",
    {"family": "softplus_blend", "a": 1.0, "b": 2.0, "s": 1.0, "x0": 0.0},
    {
        "dim_n": 1, "dim_d1": 1, "dim_d2": 1, "horizon": 1.0,
        **_ZERO_FACTOR,
        "theta": {"kind": "constant", "value": [0.0, 0.0]},
        "terminal_h": {"kind": "zero"},
    },
    {**_SMALL_GRID, "x_count": 51},
)

SINE_SOFTPLUS = Problem(
    "sine_softplus",
    {"family": "softplus_blend", "a": 1.0, "b": 2.0, "s": 1.0, "x0": 0.0},
    {
        "dim_n": 1, "dim_d1": 1, "dim_d2": 1, "horizon": 1.0,
        **_ZERO_FACTOR,
        "theta": {"kind": "constant", "value": [0.3, 0.0]},
        "terminal_h": {"kind": "sinusoid", "amp_x": 0.5, "freq_x": 1.0},
    },
    {**_SMALL_GRID, "x_bounds": [-6.0, 6.0], "x_count": 121},
)

# factor-driven risk price and liability; the untradable direction loads on
# the factor, so pi2(Z) and the quadratic driver term are active
FACTOR_SOFTPLUS = Problem(
    "factor_softplus",
    {"family": "softplus_blend", "a": 1.0, "b": 2.0, "s": 1.0, "x0": 0.0},
    {
        "dim_n": 1, "dim_d1": 1, "dim_d2": 1, "horizon": 1.0,
        "tilde_mu": {"kind": "affine", "offset": [0.0], "matrix": [[-0.5]]},
        "tilde_sigma": {"kind": "constant", "value": [[0.2], [0.4]]},
        "theta": {"kind": "sinusoid", "base": [0.3, 0.1], "amplitude": [0.1, 0.0], "frequency": [1.0]},
        "terminal_h": {"kind": "sinusoid", "amp_x": 0.5, "freq_x": 1.0, "amp_xtilde": [0.3]},
    },
    {**_SMALL_GRID, "x_bounds": [-6.0, 6.0], "x_count": 101, "xt_bounds": [[-2.0, 2.0]], "xt_counts": [17]},
)

BUNDLED = {p.name: p for p in (EXPONENTIAL, DEGENERATE, SINE_SOFTPLUS, FACTOR_SOFTPLUS)}


def exponential_problem(gamma: float = 2.0, theta=(0.3, 0.0), h: float = 0.0, horizon: float = 1.0) -> Problem:
    """Constant-risk-aversion problem with constant risk price and liability ``h``."""
    terminal = {"kind": "zero"} if h == 0 else {"kind": "constant", "constant": float(h)}
    market = dict(EXPONENTIAL.market)
    market.update({
        "horizon": float(horizon),
        "theta": {"kind": "constant", "value": [float(v) for v in theta]},
        "terminal_h": terminal,
        "dim_d1": 1,
        "dim_d2": len(theta) - 1,
        "tilde_sigma": {"kind": "constant", "value": [[0.0]] + [[0.2]] * (len(theta) - 1)},
    })
    return Problem("exponential", {"family": "linear", "gamma": float(gamma), "c": -math.log(gamma)}, market, EXPONENTIAL.grid)
