"""Exogenous factor diffusion, market price of risk and terminal liability.

Coefficients come from a small closed catalogue so that every run can be
serialised and replayed. All callables are time-homogeneous and vectorised
over leading axes: a factor state has shape ``(..., N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import InvalidMarketSpec
from .validation import CheckResult, ValidationReport


def _arr(v, shape=None) -> NDArray:
    a = np.asarray(v, dtype=float)
    if shape is not None and a.shape != shape:
        raise InvalidMarketSpec(f"expected shape {shape}, got {a.shape}")
    return a


# ---------------------------------------------------------------------------
# catalogue
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstantTerm:
    """A constant vector or matrix, independent of the factor state."""

    value: NDArray

    def __call__(self, t, xt):
        xt = np.asarray(xt, dtype=float)
        return np.broadcast_to(self.value, xt.shape[:-1] + self.value.shape).copy()

    def lipschitz(self) -> float:
        return 0.0

    def sup(self) -> float:
        return float(np.linalg.norm(self.value))

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value.tolist()}


@dataclass(frozen=True, eq=False)
class AffineTerm:
    """Drift ``offset + xt @ matrix`` (row-vector convention, ``matrix`` is N x N)."""

    offset: NDArray
    matrix: NDArray

    def __call__(self, t, xt):
        xt = np.asarray(xt, dtype=float)
        return self.offset + (xt[..., :, None] * self.matrix).sum(axis=-2)

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def sup(self) -> float:
        return np.inf if np.any(self.matrix) else float(np.linalg.norm(self.offset))

    def to_dict(self) -> dict:
        return {"kind": "affine", "offset": self.offset.tolist(), "matrix": self.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class SinusoidTerm:
    """Bounded term ``base + amplitude * sin(xt @ frequency + phase)``.

    ``base`` and ``amplitude`` share the output shape (a vector of length d for
    the market price of risk, a d x N matrix for volatilities); ``frequency`` has
    length N.
    """

    base: NDArray
    amplitude: NDArray
    frequency: NDArray
    phase: float = 0.0

    def __call__(self, t, xt):
        xt = np.asarray(xt, dtype=float)
        arg = (xt * self.frequency).sum(axis=-1) + self.phase
        arg = arg.reshape(arg.shape + (1,) * self.base.ndim)
        return self.base + self.amplitude * np.sin(arg)

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.amplitude) * np.linalg.norm(self.frequency))

    def sup(self) -> float:
        return float(np.linalg.norm(np.abs(self.base) + np.abs(self.amplitude)))

    def to_dict(self) -> dict:
        return {
            "kind": "sinusoid",
            "base": self.base.tolist(),
            "amplitude": self.amplitude.tolist(),
            "frequency": self.frequency.tolist(),
            "phase": self.phase,
        }


def make_term(spec: dict, out_shape: tuple[int, ...], n: int):
    """Build a catalogue term for an output of ``out_shape`` on an ``n``-dimensional factor."""
    spec = dict(spec)
    kind = spec.pop("kind")
    try:
        if kind == "constant":
            return ConstantTerm(_arr(spec.pop("value"), out_shape))
        if kind == "affine":
            return AffineTerm(_arr(spec.pop("offset"), out_shape), _arr(spec.pop("matrix"), (n, n)))
        if kind == "sinusoid":
            base = _arr(spec.pop("base"), out_shape)
            amp = _arr(spec.pop("amplitude", np.zeros(out_shape)), out_shape)
            freq = _arr(spec.pop("frequency", np.zeros(n)), (n,))
            return SinusoidTerm(base, amp, freq, float(spec.pop("phase", 0.0)))
    except KeyError as exc:
        raise InvalidMarketSpec(f"{kind} term is missing {exc}") from None
    raise InvalidMarketSpec(f"unknown coefficient kind {kind!r}")


@dataclass(frozen=True, eq=False)
class TerminalLiability:
    """Terminal liability ``H(xt, x)`` from the catalogue.

    kinds
        ``zero``      H = 0
        ``constant``  H = constant
        ``sinusoid``  H = constant + amp_x sin(freq_x x + phase_x) + sum_j amp_xtilde_j sin(xt_j)
        ``tanh``      H = constant + amp_x tanh(freq_x x) + sum_j amp_xtilde_j sin(xt_j)
        ``linear``    H = constant + amp_x x + xt @ amp_xtilde   (unbounded; audit fixtures only)
    """

    kind: str
    n: int
    constant: float = 0.0
    amp_x: float = 0.0
    freq_x: float = 1.0
    phase_x: float = 0.0
    amp_xtilde: NDArray = field(default=None)

    def __post_init__(self):
        if self.kind not in {"zero", "constant", "sinusoid", "tanh", "linear"}:
            raise InvalidMarketSpec(f"unknown terminal kind {self.kind!r}")
        amp = np.zeros(self.n) if self.amp_xtilde is None else _arr(self.amp_xtilde, (self.n,))
        object.__setattr__(self, "amp_xtilde", amp)

    def __call__(self, xt, x):
        xt = np.asarray(xt, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros(np.broadcast_shapes(xt.shape[:-1], x.shape))
        if self.kind == "constant":
            return np.full(np.broadcast_shapes(xt.shape[:-1], x.shape), self.constant)
        if self.kind == "linear":
            return self.constant + self.amp_x * x + (xt * self.amp_xtilde).sum(axis=-1)
        if self.kind == "sinusoid":
            gx = self.amp_x * np.sin(self.freq_x * x + self.phase_x)
        else:
            gx = self.amp_x * np.tanh(self.freq_x * x)
        return self.constant + gx + (np.sin(xt) * self.amp_xtilde).sum(axis=-1)

    def lipschitz_x(self) -> float:
        if self.kind in {"zero", "constant"}:
            return 0.0
        if self.kind == "linear":
            return abs(self.amp_x)
        return abs(self.amp_x * self.freq_x)

    def lipschitz_xtilde(self) -> float:
        return float(np.linalg.norm(self.amp_xtilde))

    def sup(self) -> float:
        if self.kind == "linear" and (self.amp_x or np.any(self.amp_xtilde)):
            return np.inf
        return abs(self.constant) + abs(self.amp_x) + float(np.abs(self.amp_xtilde).sum())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "constant": self.constant,
            "amp_x": self.amp_x,
            "freq_x": self.freq_x,
            "phase_x": self.phase_x,
            "amp_xtilde": self.amp_xtilde.tolist(),
        }


def make_terminal(spec: dict, n: int) -> TerminalLiability:
    spec = dict(spec)
    kind = spec.pop("kind")
    known = {"constant", "amp_x", "freq_x", "phase_x", "amp_xtilde"}
    extra = set(spec) - known
    if extra:
        raise InvalidMarketSpec(f"unexpected terminal parameters {sorted(extra)}")
    return TerminalLiability(kind, n, **spec)


# ---------------------------------------------------------------------------
# market
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarketSpec:
    """Factor diffusion ``dX~ = mu~ dt + dW^T sigma~`` with risk price and liability.

    Lipschitz constants and sup-bounds are user declarations; left as ``None``
    they are filled from the catalogue terms' analytic values.
    ``tilde_sigma`` returns ``(..., d, N)``, ``theta`` returns ``(..., d)``.
    """

    dim_n: int
    dim_d1: int
    dim_d2: int
    tilde_mu: Any
    tilde_sigma: Any
    theta: Any
    terminal_h: TerminalLiability
    horizon: float = 1.0
    lip_h_x: float | None = None
    lip_h_xtilde: float | None = None
    lip_theta: float | None = None
    lip_mu: float | None = None
    lip_sigma: float | None = None
    theta_sup: float | None = None
    h_sup: float | None = None
    sigma_sup: float | None = None

    def __post_init__(self):
        if self.dim_n < 1 or self.dim_d1 < 1 or self.dim_d2 < 0:
            raise InvalidMarketSpec("need N >= 1, d1 >= 1, d2 >= 0")
        if not self.horizon > 0:
            raise InvalidMarketSpec("horizon must be positive")
        defaults = {
            "lip_h_x": self.terminal_h.lipschitz_x(),
            "lip_h_xtilde": self.terminal_h.lipschitz_xtilde(),
            "lip_theta": self.theta.lipschitz(),
            "lip_mu": self.tilde_mu.lipschitz(),
            "lip_sigma": self.tilde_sigma.lipschitz(),
            "theta_sup": self.theta.sup(),
            "h_sup": self.terminal_h.sup(),
            "sigma_sup": self.tilde_sigma.sup(),
        }
        for key, val in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, float(val))

    @property
    def dim_d(self) -> int:
        return self.dim_d1 + self.dim_d2

    def project(self, v: ArrayLike) -> tuple[NDArray, NDArray]:
        """Split ``v`` (last axis length d) into tradable and untradable parts."""
        v = np.asarray(v, dtype=float)
        p1 = v.copy()
        p1[..., self.dim_d1:] = 0.0
        p2 = v.copy()
        p2[..., : self.dim_d1] = 0.0
        return p1, p2

    def pi1(self, v: ArrayLike) -> NDArray:
        out = np.array(v, dtype=float)
        out[..., self.dim_d1:] = 0.0
        return out

    def pi2(self, v: ArrayLike) -> NDArray:
        out = np.array(v, dtype=float)
        out[..., : self.dim_d1] = 0.0
        return out

    def to_dict(self) -> dict:
        return {
            "dim_n": self.dim_n,
            "dim_d1": self.dim_d1,
            "dim_d2": self.dim_d2,
            "horizon": self.horizon,
            "tilde_mu": self.tilde_mu.to_dict(),
            "tilde_sigma": self.tilde_sigma.to_dict(),
            "theta": self.theta.to_dict(),
            "terminal_h": self.terminal_h.to_dict(),
            "lip_h_x": self.lip_h_x,
            "lip_h_xtilde": self.lip_h_xtilde,
            "lip_theta": self.lip_theta,
            "lip_mu": self.lip_mu,
            "lip_sigma": self.lip_sigma,
            "theta_sup": self.theta_sup,
            "h_sup": self.h_sup,
            "sigma_sup": self.sigma_sup,
        }


_DECLARED = ("lip_h_x", "lip_h_xtilde", "lip_theta", "lip_mu", "lip_sigma", "theta_sup", "h_sup", "sigma_sup")


def make_market(spec: dict) -> MarketSpec:
    """Build a :class:`MarketSpec` from its configuration dictionary."""
    spec = dict(spec)
    n = int(spec.pop("dim_n"))
    d1 = int(spec.pop("dim_d1"))
    d2 = int(spec.pop("dim_d2", 0))
    d = d1 + d2
    try:
        mu = make_term(spec.pop("tilde_mu", {"kind": "constant", "value": [0.0] * n}), (n,), n)
        sigma = make_term(spec.pop("tilde_sigma"), (d, n), n)
        theta = make_term(spec.pop("theta"), (d,), n)
        terminal = make_terminal(spec.pop("terminal_h", {"kind": "zero"}), n)
    except KeyError as exc:
        raise InvalidMarketSpec(f"market is missing {exc}") from None
    horizon = float(spec.pop("horizon", 1.0))
    declared = {k: (None if spec.get(k) is None else float(spec.pop(k))) for k in _DECLARED}
    for k in _DECLARED:
        spec.pop(k, None)
    if spec:
        raise InvalidMarketSpec(f"unexpected market keys {sorted(spec)}")
    return MarketSpec(n, d1, d2, mu, sigma, theta, terminal, horizon, **declared)


def split_theta(spec: MarketSpec, t: float, xt: ArrayLike) -> tuple[NDArray, NDArray]:
    """Tradable and untradable parts of the market price of risk at ``(t, xt)``."""
    return spec.project(spec.theta(t, xt))


# ---------------------------------------------------------------------------
# (C2) audit
# ---------------------------------------------------------------------------


def _ratio_check(name, f, u, v, dist, bound, points, rtol) -> CheckResult:
    diff = np.asarray(f(u)) - np.asarray(f(v))
    num = np.sqrt((diff.reshape(len(dist), -1) ** 2).sum(axis=1))
    ratio = np.where(dist > 0, num / np.where(dist > 0, dist, 1.0), 0.0)
    i = int(np.argmax(ratio))
    ok = bool(ratio[i] <= bound * (1 + rtol) + rtol)
    return CheckResult(name, ok, float(ratio[i]), float(bound), points[i])


def _sup_check(name, values, bound, points, rtol) -> CheckResult:
    mags = np.sqrt((np.asarray(values).reshape(len(points), -1) ** 2).sum(axis=1))
    i = int(np.argmax(mags))
    ok = bool(mags[i] <= bound * (1 + rtol) + rtol)
    return CheckResult(name, ok, float(mags[i]), float(bound), points[i])


def validate_c2(
    spec: MarketSpec,
    probes: int = 2000,
    seed: int = 0,
    box: float = 10.0,
    rtol: float = 1e-8,
) -> ValidationReport:
    """Audit declared Lipschitz constants and bounds on random probe pairs.

    Half of the pairs are far apart (uniform in ``[-box, box]``), half are close
    (perturbations of size ``1e-3``) so that local slopes are seen as well.
    Failures are report entries; nothing is raised.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    n = spec.dim_n
    far = probes - probes // 2
    u_t = rng.uniform(-box, box, (probes, n))
    u_x = rng.uniform(-box, box, probes)
    v_t = np.concatenate([rng.uniform(-box, box, (far, n)), u_t[far:] + 1e-3 * rng.standard_normal((probes - far, n))])
    v_x = np.concatenate([rng.uniform(-box, box, far), u_x[far:] + 1e-3 * rng.standard_normal(probes - far)])
    dt = np.linalg.norm(u_t - v_t, axis=1)
    dx = np.abs(u_x - v_x)
    pts = [np.concatenate([a, [b]]) for a, b in zip(u_t, u_x)]
    H = spec.terminal_h
    checks = [
        CheckResult("L_{H,x} < 1", spec.lip_h_x < 1.0, spec.lip_h_x, 1.0, detail="terminal slope in wealth"),
        _ratio_check("H Lipschitz in x", lambda x: H(u_t, x), u_x, v_x, dx, spec.lip_h_x, pts, rtol),
        _ratio_check("H Lipschitz in x~", lambda xt: H(xt, u_x), u_t, v_t, dt, spec.lip_h_xtilde, pts, rtol),
        _ratio_check("theta Lipschitz", lambda xt: spec.theta(0.0, xt), u_t, v_t, dt, spec.lip_theta, pts, rtol),
        _ratio_check("mu~ Lipschitz", lambda xt: spec.tilde_mu(0.0, xt), u_t, v_t, dt, spec.lip_mu, pts, rtol),
        _ratio_check(
            "sigma~ Lipschitz", lambda xt: spec.tilde_sigma(0.0, xt), u_t, v_t, dt, spec.lip_sigma, pts, rtol
        ),
        _sup_check("theta bounded", spec.theta(0.0, u_t), spec.theta_sup, pts, rtol),
        _sup_check("H bounded", H(u_t, u_x), spec.h_sup, pts, rtol),
        _sup_check("sigma~ bounded", spec.tilde_sigma(0.0, u_t), spec.sigma_sup, pts, rtol),
    ]
    finite = np.isfinite(spec.tilde_mu(0.0, u_t)).all() and np.isfinite(spec.tilde_sigma(0.0, u_t)).all()
    checks.append(CheckResult("coefficients finite", bool(finite), 0.0, 0.0))
    return ValidationReport("C2", tuple(checks))
