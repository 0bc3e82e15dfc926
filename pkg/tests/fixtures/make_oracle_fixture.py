"""Regenerate ``exponential_fine.json``: a K = 10^4 solve of the exponential problem.

The closed form for the exponential case is derived by hand; this fine solve is
an independent numerical cross-check of it. Run from the repository root::

    python3 tests/fixtures/make_oracle_fixture.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from fbsde_utility.decoupling_solver import solve_backward
from fbsde_utility.problems import EXPONENTIAL

STEPS = 10_000
X_COUNT = 41


def main() -> None:
    c = EXPONENTIAL.coefficients("P")
    grid = EXPONENTIAL.build_grid(c.epsilon, steps=STEPS, x_count=X_COUNT)
    f, rep = solve_backward(c, grid)
    u0 = f.values[0]
    doc = {
        "problem": "exponential",
        "gamma": 2.0,
        "theta": [0.3, 0.0],
        "horizon": 1.0,
        "steps": STEPS,
        "x_count": X_COUNT,
        "status": rep.status.value,
        "u0_min": float(u0.min()),
        "u0_max": float(u0.max()),
        "u0_mean": float(u0.mean()),
        "u_half_mean": float(f.values[STEPS // 2].mean()),
        "max_abs_grad_x": float(np.nanmax(np.abs(f.grad_x))),
    }
    out = Path(__file__).with_name("exponential_fine.json")
    out.write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps(doc, indent=2))


if __name__ == "__main__":
    main()
