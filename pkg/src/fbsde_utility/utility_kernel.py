"""Utility functions on the real line written through their risk-aversion profile.

Every utility handled here satisfies

    U''(x) = -exp(-kappa(x)),   U'(x) = int_x^inf exp(-kappa(y)) dy,

with ``0 < inf kappa' <= sup kappa' < inf`` and ``0 <= kappa'' <= sup kappa''``.
The FBSDE coefficients never need ``U`` itself, only the quotients

    phi      = U'/U''  = -int_0^inf exp(-(kappa(x+s) - kappa(x))) ds
    U'''/U'' = -kappa'
    U'''U'/(U'')**2 = -kappa' * phi

so the module is organised around ``phi`` and ``kappa'``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import CubicSpline
from scipy.special import expit

from .errors import InvalidFamilyParams, QuadratureNonConvergence
from .validation import CheckResult, ValidationReport

TAIL_TOL = 1e-13
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_MAX_PANELS = 4096
_CHUNK = 2048


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Linear:
    """``kappa(x) = gamma*x + c``: exponential utility with absolute risk aversion gamma."""

    gamma: float
    c: float = 0.0

    def kappa(self, x):
        return self.gamma * np.asarray(x, dtype=float) + self.c

    def kappa_prime(self, x):
        return np.full(np.shape(x), float(self.gamma))

    def kappa_second(self, x):
        return np.zeros(np.shape(x))

    def kappa_diff(self, x, s):
        return self.gamma * s

    def to_dict(self) -> dict:
        return {"family": "linear", "gamma": self.gamma, "c": self.c}


@dataclass(frozen=True)
class SoftplusBlend:
    """Risk aversion moving smoothly from ``a`` (x -> -inf) to ``b`` (x -> +inf).

    ``kappa'(x) = a + (b - a) * expit(s * (x - x0))``.
    """

    a: float
    b: float
    s: float = 1.0
    x0: float = 0.0

    def _softplus(self, z):
        return np.logaddexp(0.0, z)

    def kappa(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * x + (self.b - self.a) / self.s * self._softplus(self.s * (x - self.x0))

    def kappa_prime(self, x):
        x = np.asarray(x, dtype=float)
        return self.a + (self.b - self.a) * expit(self.s * (x - self.x0))

    def kappa_second(self, x):
        x = np.asarray(x, dtype=float)
        g = expit(self.s * (x - self.x0))
        return (self.b - self.a) * self.s * g * (1.0 - g)

    def kappa_diff(self, x, s):
        # kappa(x + s) - kappa(x) without forming the two large terms
        z = self.s * (x - self.x0)
        dz = self.s * s
        return self.a * s + (self.b - self.a) / self.s * (self._softplus(z + dz) - self._softplus(z))

    def to_dict(self) -> dict:
        return {"family": "softplus_blend", "a": self.a, "b": self.b, "s": self.s, "x0": self.x0}


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Natural cubic spline through ``(knots, values)``, extended linearly outside.

    The natural end condition puts ``kappa'' = 0`` at both end knots, so the linear
    extension keeps the profile twice continuously differentiable.
    ``kappa_second`` is clamped at zero; :func:`validate_c1` inspects the raw spline.
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        xs = np.asarray(self.knots, dtype=float)
        ys = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "_spline", CubicSpline(xs, ys, bc_type="natural"))

    @property
    def _lo(self) -> float:
        return self.knots[0]

    @property
    def _hi(self) -> float:
        return self.knots[-1]

    def kappa(self, x):
        x = np.asarray(x, dtype=float)
        sp = self._spline
        lo, hi = self._lo, self._hi
        inner = sp(np.clip(x, lo, hi))
        left = sp(lo) + sp(lo, 1) * (x - lo)
        right = sp(hi) + sp(hi, 1) * (x - hi)
        return np.where(x < lo, left, np.where(x > hi, right, inner))

    def kappa_prime(self, x):
        x = np.asarray(x, dtype=float)
        return self._spline(np.clip(x, self._lo, self._hi), 1)

    def raw_kappa_second(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self._lo) & (x <= self._hi)
        return np.where(inside, self._spline(np.clip(x, self._lo, self._hi), 2), 0.0)

    def kappa_second(self, x):
        return np.maximum(self.raw_kappa_second(x), 0.0)

    def kappa_diff(self, x, s):
        return self.kappa(x + s) - self.kappa(x)

    def exact_bounds(self) -> tuple[float, float, float, float]:
        """Return ``(min kappa', max kappa', min raw kappa'', max raw kappa'')`` over the line."""
        sp = self._spline
        c = sp.c
        widths = np.diff(sp.x)
        kp_candidates = [sp(sp.x, 1)]
        # kappa' is quadratic on each piece: 3*c0*h^2 + 2*c1*h + c2
        with np.errstate(divide="ignore", invalid="ignore"):
            h_star = -c[1] / (3.0 * c[0])
        ok = np.isfinite(h_star) & (h_star > 0) & (h_star < widths)
        if ok.any():
            hs = h_star[ok]
            kp_candidates.append(3 * c[0][ok] * hs**2 + 2 * c[1][ok] * hs + c[2][ok])
        kp = np.concatenate(kp_candidates)
        kpp = np.concatenate([sp(sp.x, 2), [0.0]])
        return float(kp.min()), float(kp.max()), float(kpp.min()), float(kpp.max())

    def to_dict(self) -> dict:
        return {"family": "tabulated", "knots": list(self.knots), "values": list(self.values)}


Family = Union[Linear, SoftplusBlend, Tabulated]


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KappaModel:
    """Risk-aversion profile plus the analytic bounds used downstream.

    ``quad_panels`` is the Gauss-Legendre panel count that the adaptive
    refinement settled on for this profile (0 for the closed-form linear case).
    """

    family: Family
    kappa_prime_inf: float
    kappa_prime_sup: float
    kappa_second_sup: float
    tail_length: float = 0.0
    quad_panels: int = 0

    @property
    def is_linear(self) -> bool:
        return isinstance(self.family, Linear)

    def kappa(self, x):
        return self.family.kappa(x)

    def kappa_prime(self, x):
        return self.family.kappa_prime(x)

    def kappa_second(self, x):
        return self.family.kappa_second(x)

    def to_dict(self) -> dict:
        return self.family.to_dict()


def tail_length(a: float, tol: float = TAIL_TOL) -> float:
    """Truncation point M with ``exp(-a*M)/a <= tol``, since kappa(y)-kappa(x) >= a(y-x)."""
    return max(1.0, float(np.log(1.0 / (a * tol)) / a))


def make_kappa(family: str, **params) -> KappaModel:
    """Build a :class:`KappaModel` from a family name and its parameters.

    Parameters
    ----------
    family : {"linear", "softplus_blend", "tabulated"}
    **params
        ``linear``: ``gamma``, optional ``c``.
        ``softplus_blend``: ``a``, ``b``, optional ``s`` and ``x0``.
        ``tabulated``: ``knots`` and ``values`` (kappa at the knots).

    Raises
    ------
    InvalidFamilyParams
        If the parameters violate ``inf kappa' > 0`` or the family's own shape rules.
    """
    name = family.lower()
    try:
        if name == "linear":
            gamma = float(params.pop("gamma"))
            c = float(params.pop("c", 0.0))
            _no_extra(params)
            if not np.isfinite(gamma) or gamma <= 0:
                raise InvalidFamilyParams(f"linear family needs gamma > 0, got {gamma}")
            return KappaModel(Linear(gamma, c), gamma, gamma, 0.0)
        if name == "softplus_blend":
            a = float(params.pop("a"))
            b = float(params.pop("b"))
            s = float(params.pop("s", 1.0))
            x0 = float(params.pop("x0", 0.0))
            _no_extra(params)
            if not (a > 0):
                raise InvalidFamilyParams(f"softplus_blend needs a > 0, got {a}")
            if b < a:
                raise InvalidFamilyParams(f"softplus_blend needs b >= a, got a={a}, b={b}")
            if not (s > 0):
                raise InvalidFamilyParams(f"softplus_blend needs s > 0, got {s}")
            fam = SoftplusBlend(a, b, s, x0)
            m = tail_length(a)
            half = m + 20.0 / s
            probe = np.linspace(x0 - half, x0 + half, 401)
            return _with_panels(KappaModel(fam, a, b, (b - a) * s / 4.0, m), probe)
        if name == "tabulated":
            knots = tuple(float(v) for v in params.pop("knots"))
            values = tuple(float(v) for v in params.pop("values"))
            _no_extra(params)
            if len(knots) < 3 or len(knots) != len(values):
                raise InvalidFamilyParams("tabulated family needs >= 3 knots with matching values")
            if np.any(np.diff(knots) <= 0):
                raise InvalidFamilyParams("tabulated knots must be strictly increasing")
            fam = Tabulated(knots, values)
            kp_lo, kp_hi, _, kpp_hi = fam.exact_bounds()
            if kp_lo <= 0:
                raise InvalidFamilyParams(f"tabulated profile has inf kappa' = {kp_lo:.6g} <= 0")
            m = tail_length(kp_lo)
            probe = np.concatenate([
                np.linspace(knots[0] - m, knots[-1] + 1.0, 401),
                np.asarray(knots),
            ])
            return _with_panels(KappaModel(fam, kp_lo, kp_hi, max(kpp_hi, 0.0), m), np.sort(probe))
    except KeyError as exc:
        raise InvalidFamilyParams(f"{name} family is missing parameter {exc}") from None
    raise InvalidFamilyParams(f"unknown kappa family {family!r}")


def _no_extra(params: dict) -> None:
    if params:
        raise InvalidFamilyParams(f"unexpected parameters: {sorted(params)}")


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def _panel_rule(length: float, n_panels: int) -> tuple[NDArray, NDArray]:
    edges = np.linspace(0.0, length, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _tail_integral(family: Family, x: NDArray, length: float, n_panels: int) -> NDArray:
    """``int_0^length exp(-(kappa(x+s) - kappa(x))) ds`` for every entry of ``x``."""
    s, w = _panel_rule(length, n_panels)
    flat = x.ravel()
    out = np.empty_like(flat)
    for start in range(0, flat.size, _CHUNK):
        xs = flat[start:start + _CHUNK, None]
        # row-wise sum keeps results independent of batch composition
        out[start:start + _CHUNK] = (np.exp(-family.kappa_diff(xs, s[None, :])) * w).sum(axis=1)
    return out.reshape(x.shape)


def _refine(family: Family, x: NDArray, length: float, n_start: int, tol: float) -> tuple[NDArray, int]:
    """Double the panel count until two rules agree to ``tol``.

    Returns the finer values and the coarser panel count, whose error the
    difference of the two rules bounds.
    """
    n = max(n_start, 1)
    coarse = _tail_integral(family, x, length, n)
    while True:
        if 2 * n > _MAX_PANELS:
            raise QuadratureNonConvergence(
                f"tail integral did not settle below {tol:g} within {_MAX_PANELS} panels"
            )
        fine = _tail_integral(family, x, length, 2 * n)
        if np.max(np.abs(fine - coarse), initial=0.0) <= tol:
            return fine, n
        n, coarse = 2 * n, fine


def _with_panels(model: KappaModel, probe: NDArray) -> KappaModel:
    _, n = _refine(model.family, probe, model.tail_length, 2, TAIL_TOL)
    return KappaModel(
        model.family,
        model.kappa_prime_inf,
        model.kappa_prime_sup,
        model.kappa_second_sup,
        model.tail_length,
        n,
    )


# ---------------------------------------------------------------------------
# quotients
# ---------------------------------------------------------------------------


def phi(model: KappaModel, x: ArrayLike, tol: float | None = None):
    """Risk-tolerance quotient ``U'/U''`` (strictly negative).

    With ``tol`` given, the panel count is re-refined on these particular points
    until two successive refinements agree to ``tol``.
    """
    xa = np.asarray(x, dtype=float)
    if model.is_linear:
        out = np.full(xa.shape, -1.0 / model.family.gamma)
    elif tol is None:
        out = -_tail_integral(model.family, xa, model.tail_length, model.quad_panels)
    else:
        val, _ = _refine(model.family, xa, model.tail_length, model.quad_panels, tol)
        out = -val
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Quotients:
    """Derivative quotients of U at a point (or array of points)."""

    phi: NDArray | float
    inv_phi: NDArray | float
    neg_kappa_prime: NDArray | float
    drift_coeff: NDArray | float
    kappa_second: NDArray | float = 0.0

    @property
    def kappa_prime(self):
        return -self.neg_kappa_prime

    @property
    def drift_coeff_slope(self):
        """d/dp of ``drift_coeff``: ``(1 + phi*kappa')**2 + phi**2 * kappa'' / 2``."""
        kp = self.kappa_prime
        return (1.0 + self.phi * kp) ** 2 + 0.5 * self.phi**2 * self.kappa_second


def quotients(model: KappaModel, p: ArrayLike) -> Quotients:
    p = np.asarray(p, dtype=float)
    ph = np.asarray(phi(model, p))
    kp = np.asarray(model.kappa_prime(p), dtype=float)
    kpp = np.asarray(model.kappa_second(p), dtype=float)
    drift = ph * (1.0 + 0.5 * kp * ph)
    q = Quotients(ph, 1.0 / ph, -kp, drift, kpp)
    if p.ndim == 0:
        q = Quotients(*(float(v) for v in (q.phi, q.inv_phi, q.neg_kappa_prime, q.drift_coeff, q.kappa_second)))
    return q


def second_derivative(model: KappaModel, p: ArrayLike):
    """``U''(p) = -exp(-kappa(p))``."""
    return -np.exp(-model.kappa(p))


def marginal_utility(model: KappaModel, p: ArrayLike):
    """``U'(p) = int_p^inf exp(-kappa(y)) dy``, evaluated as ``phi(p) * U''(p)``."""
    out = np.asarray(phi(model, p)) * second_derivative(model, p)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# (C1) audit
# ---------------------------------------------------------------------------


def validate_c1(model: KappaModel, probe: ArrayLike, rtol: float = 1e-10) -> ValidationReport:
    """Audit the risk-aversion profile on ``probe`` points.

    Failures are reported, never raised. For tabulated profiles the raw spline
    curvature is inspected, not the clamped one used in evaluation.
    """
    xs = np.asarray(probe, dtype=float).ravel()
    if xs.size == 0:
        raise ValueError("probe grid must be non-empty")
    kp = np.asarray(model.kappa_prime(xs), dtype=float)
    fam = model.family
    kpp = np.asarray(fam.raw_kappa_second(xs) if isinstance(fam, Tabulated) else model.kappa_second(xs))
    a, b, c2 = model.kappa_prime_inf, model.kappa_prime_sup, model.kappa_second_sup
    slack = rtol * max(1.0, b)
    i_lo, i_hi = int(np.argmin(kp)), int(np.argmax(kp))
    j_lo, j_hi = int(np.argmin(kpp)), int(np.argmax(kpp))
    checks = (
        CheckResult("inf kappa' > 0", a > 0, a, 0.0, detail="declared lower slope"),
        CheckResult("kappa' >= inf kappa'", bool(kp[i_lo] >= a - slack), float(kp[i_lo]), a, float(xs[i_lo])),
        CheckResult("kappa' <= sup kappa'", bool(kp[i_hi] <= b + slack), float(kp[i_hi]), b, float(xs[i_hi])),
        CheckResult("kappa'' >= 0", bool(kpp[j_lo] >= -slack), float(kpp[j_lo]), 0.0, float(xs[j_lo])),
        CheckResult(
            "kappa'' <= sup kappa''", bool(kpp[j_hi] <= c2 + slack), float(kpp[j_hi]), c2, float(xs[j_hi])
        ),
    )
    return ValidationReport("C1", checks)
