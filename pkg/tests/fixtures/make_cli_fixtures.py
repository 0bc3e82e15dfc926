"""Regenerate the command-line fixtures from the repository root::

    python3 tests/fixtures/make_cli_fixtures.py

``exponential_small.json`` is a coarse exponential run configuration and
``exponential_small_corrupted.json`` its solved field with every value moved
up by 0.05, the negative control for the verify command.
"""

from __future__ import annotations

import json
from pathlib import Path

from fbsde_utility.config import load_config, problem_config
from fbsde_utility.decoupling_solver import dump_field, solve_backward
from fbsde_utility.problems import EXPONENTIAL, Problem

HERE = Path(__file__).parent


def main() -> None:
    grid = {**EXPONENTIAL.grid, "steps": 20, "x_count": 41}
    prob = Problem("exponential_small", EXPONENTIAL.utility, EXPONENTIAL.market, grid)
    doc = problem_config(
        prob,
        fbsde={"form": "P", "epsilon": "auto"},
        simulate={"n_paths": 50, "seed": 1},
        verify={"checks": ["exponential_oracle", "martingale"], "martingale_paths": 4000},
    )
    (HERE / "exponential_small.json").write_text(json.dumps(doc, indent=2) + "\n")

    cfg = load_config(HERE / "exponential_small.json")
    p = cfg.problem()
    c = p.coefficients("P")
    f, _ = solve_backward(c, p.build_grid(c.epsilon))
    dump_field(f.shifted(0.05), HERE / "exponential_small_corrupted.json")


if __name__ == "__main__":
    main()
