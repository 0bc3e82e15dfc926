"""
Forward paths and the martingale diagnostic
===========================================

Along optimal paths the marginal utility U'(X_t + Y_t) is a martingale. We
simulate 10 000 paths for the exponential problem, report z-scores of the
sample mean against the starting value, and repeat with a deliberately
wrong field (shifted by 0.05) to see the diagnostic reject it.
"""

from __future__ import annotations

import numpy as np

from fbsde_utility import BUNDLED, SolverOptions, solve_backward
from fbsde_utility.path_simulator import simulate, wealth_consistency
from fbsde_utility.verification import martingale_diagnostic

problem = BUNDLED["exponential"]
coeffs = problem.coefficients("P")
field, _ = solve_backward(coeffs, problem.build_grid(coeffs.epsilon), SolverOptions())

ens = simulate(field, coeffs, [0.0], 0.0, n_paths=10_000, seed=2024, measure="P")
print(f"{ens.n_paths} paths x {ens.n_steps} steps")
print(f"wealth/strategy consistency residual: {wealth_consistency(ens)['max_abs']:.2e}")

good = martingale_diagnostic(ens, coeffs.kappa)
print(good.line(), "z =", np.round(good.metrics["z_scores"], 2))

# %%
# Negative control: the shifted field violates the terminal condition.
bad_ens = simulate(field.shifted(0.05), coeffs, [0.0], 0.0, n_paths=10_000, seed=2024, measure="P")
bad = martingale_diagnostic(bad_ens, coeffs.kappa)
print(bad.line(), "z =", np.round(bad.metrics["z_scores"], 2))
