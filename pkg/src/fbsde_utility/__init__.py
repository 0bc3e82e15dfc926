"""Numerical solver for the coupled forward-backward system of utility maximization.

The optimal wealth and its backward companion are computed through a grid
decoupling field, simulated forward, and checked against closed forms and
structural properties.
"""

from .decoupling_solver import (
    DecouplingField,
    Grid,
    SolveReport,
    SolverOptions,
    SolveStatus,
    build_grid,
    dump_field,
    evaluate_field,
    evaluate_gradient,
    load_field,
    solve_backward,
)
from .errors import (
    ConfigError,
    DomainTooSmall,
    FbsdeError,
    FixedPointFailure,
    InvalidFamilyParams,
    InvalidMarketSpec,
    NonFiniteState,
    QuadratureNonConvergence,
)
from .fbsde_assembly import FbsdeCoefficients, Form, assemble, assemble_b_form, assemble_p_form, rescale_epsilon
from .market_model import MarketSpec, make_market, validate_c2
from .path_simulator import PathEnsemble, optimal_strategy, simulate, wealth_consistency
from .problems import BUNDLED, Problem
from .utility_kernel import KappaModel, make_kappa, phi, quotients, validate_c1
from .verification import OracleSpec, exponential_oracle, martingale_diagnostic

__all__ = [
    "BUNDLED", "ConfigError", "DecouplingField", "DomainTooSmall", "FbsdeCoefficients", "FbsdeError",
    "FixedPointFailure", "Form", "Grid", "InvalidFamilyParams", "InvalidMarketSpec", "KappaModel",
    "MarketSpec", "NonFiniteState", "OracleSpec", "PathEnsemble", "Problem", "QuadratureNonConvergence",
    "SolveReport", "SolveStatus", "SolverOptions", "assemble", "assemble_b_form", "assemble_p_form",
    "build_grid", "dump_field", "evaluate_field", "evaluate_gradient", "exponential_oracle", "load_field",
    "make_kappa", "make_market", "martingale_diagnostic", "optimal_strategy", "phi", "quotients",
    "rescale_epsilon", "simulate", "solve_backward", "validate_c1", "validate_c2", "wealth_consistency",
]
