"""Coefficient sets of the utility FBSDE in the scaled factor coordinates.

State is ``(xc, x)`` with ``xc = xt / epsilon`` the scaled factor (shape ``(..., N)``)
and ``x`` the wealth. ``p = x + y`` is the argument of all utility quotients.

P-form (Brownian motion W)::

    dX  = -(pi1(theta) phi(p) + pi1(Z))^T (dW + pi1(theta) dt)
    dY  = f_P dt + Z^T dW,
    f_P = -1/2 |pi1 theta|^2 (U'''U'^2/U''^3)(p) + |pi1 theta|^2 phi(p)
          + Z.pi1(theta) - 1/2 |pi2 Z|^2 (U'''/U'')(p)

B-form (B = W + int pi1(theta) dt absorbs the Z.pi1(theta) term)::

    dX  = -(pi1(theta) phi(p) + pi1(Z))^T dB
    dY  = f_B dt + Z^T dB,
    f_B = |pi1 theta|^2 phi (1 - 1/2 U'''U'/U''^2)(p) - 1/2 |pi2 Z|^2 (U'''/U'')(p)

with ``U'''/U'' = -kappa'``, ``U'''U'/U''^2 = -kappa' phi`` and
``U'''U'^2/U''^3 = -kappa' phi^2``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .market_model import MarketSpec
from .utility_kernel import KappaModel, Quotients, quotients


class Form(str, Enum):
    P = "P"
    B = "B"


def auto_epsilon(market: MarketSpec) -> float:
    """Largest ``eps <= 1`` with ``eps * L_{H,x~} <= 0.1 * (1 - L_{H,x})``."""
    if market.lip_h_xtilde <= 0:
        return 1.0
    return min(1.0, 0.1 * (1.0 - market.lip_h_x) / market.lip_h_xtilde)


@dataclass(frozen=True, eq=False)
class FbsdeCoefficients:
    """Drift, volatility, driver and terminal condition of one assembled system.

    The quotient-taking methods accept a precomputed :class:`Quotients` for ``p``
    so a solver iteration evaluates the tail integral once.
    """

    kappa: KappaModel
    market: MarketSpec
    epsilon: float
    form: Form

    @property
    def dim_n(self) -> int:
        return self.market.dim_n

    @property
    def dim_d(self) -> int:
        return self.market.dim_d

    @property
    def dim_d1(self) -> int:
        return self.market.dim_d1

    @property
    def horizon(self) -> float:
        return self.market.horizon

    def _q(self, p, q: Quotients | None) -> Quotients:
        return quotients(self.kappa, p) if q is None else q

    # factor ------------------------------------------------------------------

    def theta1(self, t, xc) -> NDArray:
        """Tradable part of the risk price at the scaled factor state."""
        return self.market.pi1(self.market.theta(t, self.epsilon * np.asarray(xc, dtype=float)))

    def forward_drift_xtilde(self, t, xc) -> NDArray:
        eps = self.epsilon
        xt = eps * np.asarray(xc, dtype=float)
        mu = self.market.tilde_mu(t, xt)
        if self.form is Form.B:
            th1 = self.market.pi1(self.market.theta(t, xt))
            sig = self.market.tilde_sigma(t, xt)
            mu = mu - (th1[..., :, None] * sig).sum(axis=-2)
        return mu / eps

    def forward_vol_xtilde(self, t, xc) -> NDArray:
        eps = self.epsilon
        return self.market.tilde_sigma(t, eps * np.asarray(xc, dtype=float)) / eps

    # wealth ------------------------------------------------------------------

    def forward_vol_x(self, t, xc, p, z, q: Quotients | None = None) -> NDArray:
        ph = np.asarray(self._q(p, q).phi)
        th1 = self.theta1(t, xc)
        return -(th1 * ph[..., None] + self.market.pi1(z))

    def forward_drift_x(self, t, xc, p, z, q: Quotients | None = None) -> NDArray:
        vol = self.forward_vol_x(t, xc, p, z, q)
        if self.form is Form.B:
            return np.zeros(vol.shape[:-1])
        return (vol * self.theta1(t, xc)).sum(axis=-1)

    def driver(self, t, xc, p, z, q: Quotients | None = None) -> NDArray:
        q = self._q(p, q)
        th1 = self.theta1(t, xc)
        th2 = (th1 * th1).sum(axis=-1)
        z = np.asarray(z, dtype=float)
        z2 = self.market.pi2(z)
        zz = (z2 * z2).sum(axis=-1)
        ph = np.asarray(q.phi)
        u3_u2 = np.asarray(q.neg_kappa_prime)
        if self.form is Form.B:
            u3u1_u2sq = u3_u2 * ph
            return th2 * (ph * (1.0 - 0.5 * u3u1_u2sq)) - 0.5 * zz * u3_u2
        u3u1sq_u2cube = u3_u2 * ph * ph
        return -0.5 * th2 * u3u1sq_u2cube + th2 * ph + (z * th1).sum(axis=-1) - 0.5 * zz * u3_u2

    def driver_dp(self, t, xc, p, z, q: Quotients | None = None) -> NDArray:
        """Partial derivative of the driver in ``p = x + y`` (identical for both forms)."""
        q = self._q(p, q)
        th1 = self.theta1(t, xc)
        th2 = (th1 * th1).sum(axis=-1)
        z2 = self.market.pi2(np.asarray(z, dtype=float))
        zz = (z2 * z2).sum(axis=-1)
        return th2 * np.asarray(q.drift_coeff_slope) + 0.5 * zz * np.asarray(q.kappa_second)

    def terminal(self, xc, x) -> NDArray:
        return self.market.terminal_h(self.epsilon * np.asarray(xc, dtype=float), x)

    # bounds ------------------------------------------------------------------

    def x_vol_bound(self) -> float:
        """Wealth volatility bound at ``z = 0``: ``sup|pi1 theta| * sup|phi|``."""
        return self.market.theta_sup / self.kappa.kappa_prime_inf

    def to_dict(self) -> dict:
        return {"form": self.form.value, "epsilon": self.epsilon}


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    return eps


def assemble_p_form(u: KappaModel, m: MarketSpec, eps: float | None = None) -> FbsdeCoefficients:
    return FbsdeCoefficients(u, m, _check_eps(auto_epsilon(m) if eps is None else eps), Form.P)


def assemble_b_form(u: KappaModel, m: MarketSpec, eps: float | None = None) -> FbsdeCoefficients:
    """Same problem written under the drift-absorbing Brownian motion B."""
    return FbsdeCoefficients(u, m, _check_eps(auto_epsilon(m) if eps is None else eps), Form.B)


def assemble(u: KappaModel, m: MarketSpec, form: Form | str = Form.P, eps: float | None = None):
    return assemble_b_form(u, m, eps) if Form(form) is Form.B else assemble_p_form(u, m, eps)


def rescale_epsilon(c: FbsdeCoefficients, eps: float) -> FbsdeCoefficients:
    """The same problem at scale ``eps``; solutions map by ``xc' = (c.epsilon / eps) * xc``."""
    return dataclasses.replace(c, epsilon=_check_eps(eps))


def driver_residual(p_form: FbsdeCoefficients, b_form: FbsdeCoefficients, t, xc, p, z: ArrayLike) -> NDArray:
    """``f_P - f_B - z.pi1(theta)``, which vanishes identically."""
    q = quotients(p_form.kappa, p)
    fp = p_form.driver(t, xc, p, z, q)
    fb = b_form.driver(t, xc, p, z, q)
    return fp - fb - (np.asarray(z) * p_form.theta1(t, xc)).sum(axis=-1)
