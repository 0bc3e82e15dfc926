from __future__ import annotations

import pytest

from fbsde_utility.decoupling_solver import solve_backward
from fbsde_utility.problems import BUNDLED


class Solved:
    """A bundled problem solved once per session in one form."""

    def __init__(self, name: str, form: str):
        self.problem = BUNDLED[name]
        self.coeffs = self.problem.coefficients(form)
        self.grid = self.problem.build_grid(self.coeffs.epsilon)
        self.field, self.report = solve_backward(self.coeffs, self.grid)


_cache: dict[tuple[str, str], Solved] = {}


def solved(name: str, form: str = "P") -> Solved:
    key = (name, form)
    if key not in _cache:
        _cache[key] = Solved(name, form)
    return _cache[key]


@pytest.fixture(scope="session")
def exponential_p():
    return solved("exponential", "P")


@pytest.fixture(scope="session")
def exponential_b():
    return solved("exponential", "B")


@pytest.fixture(scope="session")
def degenerate_p():
    return solved("degenerate", "P")


@pytest.fixture(scope="session")
def sine_p():
    return solved("sine_softplus", "P")


@pytest.fixture(scope="session")
def sine_b():
    return solved("sine_softplus", "B")
