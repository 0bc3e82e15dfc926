"""Executable oracles and diagnostics for solved fields and simulated paths.

Every check returns a :class:`Report` whose ``to_dict`` is deterministic, so a
JSON dump of a verification run is byte-stable for a fixed configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decoupling_solver import DecouplingField, Grid, SolveReport, SolverOptions, solve_backward
from .market_model import MarketSpec
from .path_simulator import PathEnsemble
from .problems import Problem
from .utility_kernel import KappaModel, make_kappa, phi, quotients, tail_length

REPORT_FORMAT = "fbsde-utility/verification"


@dataclass
class Report:
    """Outcome of one check: pass flag, measured metrics and the tolerances used."""

    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "metrics": _clean(self.metrics),
            "tolerances": _clean(self.tolerances),
            "failures": _clean(self.failures),
            "note": self.note,
        }

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}"


def _clean(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


def write_reports(reports: list[Report], path: str | Path, meta: dict | None = None) -> None:
    doc = {
        "format": REPORT_FORMAT,
        "version": 1,
        "passed": all(r.passed for r in reports),
        "meta": _clean(meta or {}),
        "checks": [r.to_dict() for r in reports],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def discretization_tolerance(grid: Grid, c: float = 5.0) -> float:
    """``c (dt + dx^2)`` with ``dx`` the wealth-axis spacing."""
    return c * (grid.dt + grid.dx ** 2)


# ---------------------------------------------------------------------------
# exponential oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleSpec:
    """Constant risk aversion ``gamma``, constant risk price ``theta`` and liability ``h``."""

    gamma: float
    theta: tuple[float, ...]
    h: float = 0.0
    horizon: float = 1.0
    d1: int = 1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not 1 <= self.d1 <= len(self.theta):
            raise ValueError("d1 must be between 1 and len(theta)")

    @property
    def theta1_sq(self) -> float:
        th = np.asarray(self.theta[: self.d1], dtype=float)
        return float((th * th).sum())


def exponential_oracle(o: OracleSpec, t: float) -> tuple[float, np.ndarray]:
    """``(Y_t, pi*)`` for exponential utility.

    With ``phi = -1/gamma`` and ``kappa' = gamma`` the driver reduces to the
    constant ``|pi1 theta|^2 / (2 gamma)`` at ``Z = 0``, which then solves the
    backward equation: ``Y_t = h + (T - t) |pi1 theta|^2 / (2 gamma)`` and
    ``pi* = pi1(theta) / gamma``.
    """
    if not (0.0 <= t <= o.horizon):
        raise ValueError(f"t={t} outside [0, {o.horizon}]")
    y = o.h + (o.horizon - t) * o.theta1_sq / (2.0 * o.gamma)
    pi = np.zeros(len(o.theta))
    pi[: o.d1] = np.asarray(o.theta[: o.d1], dtype=float) / o.gamma
    return float(y), pi


def oracle_error_check(f: DecouplingField, o: OracleSpec, rtol: float = 1e-3) -> Report:
    """Relative error of ``u(0, .)`` against the exponential oracle at every node."""
    y0, _ = exponential_oracle(o, 0.0)
    err = np.abs(f.values[0] - y0)
    rel = err / abs(y0) if y0 != 0 else err
    worst = int(np.argmax(rel))
    return Report(
        "exponential_oracle",
        bool(rel.max() <= rtol),
        {"y0_oracle": y0, "max_abs_error": err.max(), "max_rel_error": rel.max(), "worst_node": worst},
        {"rtol": rtol},
    )


def convergence_order_check(
    problem: Problem, o: OracleSpec, steps: int = 100, min_ratio: float = 1.7, options: SolverOptions | None = None
) -> Report:
    """Max oracle error at ``steps`` and ``2 steps``; passes when it drops by ``min_ratio``."""
    errs = []
    y0, _ = exponential_oracle(o, 0.0)
    c = problem.coefficients("P")
    for k in (steps, 2 * steps):
        f, _ = solve_backward(c, problem.build_grid(c.epsilon, steps=k), options)
        errs.append(float(np.abs(f.values[0] - y0).max()))
    ratio = errs[0] / errs[1] if errs[1] > 0 else (np.inf if errs[0] > 0 else np.nan)
    floor = 64 * np.finfo(float).eps * max(abs(y0), 1.0)
    note = ""
    if max(errs) <= floor:
        note = "both errors are at floating-point level, so no time-discretization error is measurable"
    return Report(
        "convergence_order",
        bool(np.isfinite(ratio) and ratio >= min_ratio),
        {"steps": [steps, 2 * steps], "max_error": errs, "ratio": ratio, "roundoff_floor": floor},
        {"min_ratio": min_ratio},
        note=note,
    )


# ---------------------------------------------------------------------------
# martingale diagnostic
# ---------------------------------------------------------------------------


def ladder_indices(n_steps: int, points: int = 5) -> np.ndarray:
    """Step indices of ``points`` equally spaced times in ``(0, T]``."""
    return np.unique(np.rint(np.linspace(0, n_steps, points + 1)[1:]).astype(int))


def martingale_diagnostic(
    e: PathEnsemble, u: KappaModel, points: int = 5, threshold: float = 3.0
) -> Report:
    """Check that ``U'(X_t + Y_t)`` keeps its initial mean along a time ladder.

    At ``t = T`` the exact liability ``H`` replaces the stored field value, so a
    field that is wrong by a constant is detected there. The same process
    rebuilt as the stochastic exponential of ``alpha = pi2(Z)/phi - pi1(theta)``
    (``U''/U' = 1/phi``) is compared path by path with the direct value.
    """
    if e.measure != "P":
        raise ValueError("the martingale property holds under W; simulate with measure='P'")
    K = e.n_steps
    n = e.n_paths
    ref = float(e.marginal[0, 0])
    idx = ladder_indices(K, points)
    z_scores, means = [], []
    for k in idx:
        if k == K:
            p = e.x[:, K] + e.terminal
            vals = -np.asarray(phi(u, p)) * np.exp(-u.kappa(p))
        else:
            vals = e.marginal[:, k]
        # centre on the reference first so a constant process gives exactly zero
        dev = vals - ref
        diff = float(dev.mean())
        sd = float(dev.std(ddof=1)) if n > 1 else 0.0
        mean = ref + diff
        if sd > 0:
            zs = diff / (sd / np.sqrt(n))
        else:
            zs = 0.0 if diff == 0 else float(np.sign(diff) * np.inf)
        z_scores.append(float(zs))
        means.append(mean)

    # stochastic-exponential reconstruction
    d1 = e.dim_d1
    p = e.x[:, :-1] + e.y[:, :-1]
    ph = np.asarray(phi(u, p))
    alpha = np.empty_like(e.dW)
    alpha[..., :d1] = -e.theta1[:, :-1, :d1]
    alpha[..., d1:] = e.z[:, :-1, d1:] / ph[..., None]
    log_inc = (alpha * e.dW).sum(axis=-1) - 0.5 * (alpha * alpha).sum(axis=-1) * e.dt
    recon = e.marginal[:, :1] * np.exp(np.cumsum(log_inc, axis=1))
    rel = np.abs(recon - e.marginal[:, 1:]) / np.abs(e.marginal[:, 1:])

    worst = int(np.argmax(np.abs(z_scores)))
    ok = bool(np.all(np.abs(z_scores) <= threshold))
    return Report(
        "martingale",
        ok,
        {
            "n_paths": n,
            "reference": ref,
            "ladder_times": [float(e.times[k]) for k in idx],
            "means": means,
            "z_scores": z_scores,
            "max_abs_z": float(np.abs(z_scores).max()),
            "worst_time": float(e.times[idx[worst]]),
            "reconstruction_rel_error_max": float(rel.max(initial=0.0)),
            "reconstruction_rel_error_median_T": float(np.median(rel[:, -1])) if rel.size else 0.0,
        },
        {"z_threshold": threshold},
        note=(
            f"{len(idx)} ladder points tested at {threshold} standard errors each; "
            "no multiple-testing correction (Bonferroni would divide the level by the ladder size)"
        ),
    )


# ---------------------------------------------------------------------------
# field checks
# ---------------------------------------------------------------------------


def gradient_bound_check(
    f: DecouplingField, m: MarketSpec, tol: float = 0.02, lower: float = -0.99, max_failures: int = 20
) -> Report:
    """Wealth gradient of every retained step within ``[lower, L_{H,x} + tol]``.

    The empirical distance of the smallest gradient from -1 is reported as
    the lower margin; no particular value is asserted beyond ``lower``.
    """
    g = f.grid
    steps = range(f.first_step, g.n_steps + 1)
    gx = f.grad_x[f.first_step:].reshape(len(steps), -1)
    upper = m.lip_h_x + tol
    bad = np.argwhere((gx > upper) | (gx < lower))
    failures = [
        {"t": float(g.times[f.first_step + k]), "node": int(j), "grad_x": float(gx[k, j])}
        for k, j in bad[:max_failures]
    ]
    return Report(
        "gradient_band",
        bad.size == 0,
        {
            "max_grad_x": gx.max(),
            "min_grad_x": gx.min(),
            "lower_margin": 1.0 + gx.min(),
            "n_violations": int(len(bad)),
            "steps_checked": len(steps),
        },
        {"upper": upper, "lower": lower},
        failures,
    )


def _solve(c, grid, options):
    f, rep = solve_backward(c, grid, options)
    if not f.converged:
        raise RuntimeError(f"solve ended with {rep.status.value} at t={rep.status_time}")
    return f, rep


def form_equivalence_check(
    problem: Problem,
    grid: Grid | None = None,
    eps: float | None = None,
    tol: float | None = None,
    options: SolverOptions | None = None,
) -> Report:
    """Solve both forms on one grid and compare ``u(0, .)`` node by node.

    With ``theta = 0`` the two systems coincide term by term and the
    comparison must be exact.
    """
    cp = problem.coefficients("P", eps)
    cb = problem.coefficients("B", eps)
    grid = grid if grid is not None else problem.build_grid(cp.epsilon)
    fp, _ = _solve(cp, grid, options)
    fb, _ = _solve(cb, grid, options)
    diff = float(np.abs(fp.values[0] - fb.values[0]).max())
    exact = cp.market.theta_sup == 0
    tol = discretization_tolerance(grid) if tol is None else tol
    bound = 0.0 if exact else tol
    return Report(
        f"form_equivalence[{problem.name}]",
        diff <= bound,
        {"max_abs_diff": diff, "theta_zero": exact},
        {"max_abs_diff": bound},
    )


def epsilon_equivalence_check(
    problem: Problem,
    eps1: float,
    eps2: float,
    grid: Grid | None = None,
    seed: int = 0,
    form: str = "P",
    tol: float | None = None,
    options: SolverOptions | None = None,
) -> Report:
    """Compare ``u^{eps1}(0, xc, x)`` with ``u^{eps2}(0, (eps1/eps2) xc, x)``.

    The second solve runs on the first grid with its factor axes scaled by
    ``eps1/eps2``, so the two node sets correspond one to one and the whole
    domain overlaps. ``seed`` is recorded only; the comparison is deterministic.
    """
    c1 = problem.coefficients(form, eps1)
    c2 = problem.coefficients(form, eps2)
    g1 = grid if grid is not None else problem.build_grid(eps1)
    g2 = g1.scaled(eps1 / eps2)
    f1, _ = _solve(c1, g1, options)
    f2, _ = _solve(c2, g2, options)
    diff = float(np.abs(f1.values[0] - f2.values[0]).max())
    tol = discretization_tolerance(g1) if tol is None else tol
    return Report(
        "epsilon_equivalence",
        diff <= tol,
        {"eps1": eps1, "eps2": eps2, "max_abs_diff": diff, "seed": seed},
        {"max_abs_diff": tol},
    )


def degenerate_closure_check(f: DecouplingField, e: PathEnsemble | None = None) -> Report:
    """``u``, ``Z`` and ``pi*`` identically zero (bitwise) for a problem with no risk price and no liability."""
    metrics = {"max_abs_u": float(np.abs(f.values[f.first_step:]).max())}
    zero = metrics["max_abs_u"] == 0.0
    if e is not None:
        metrics["max_abs_y"] = float(np.abs(e.y).max())
        metrics["max_abs_z"] = float(np.abs(e.z).max())
        metrics["max_abs_pi_star"] = float(np.abs(e.pi_star).max())
        metrics["max_wealth_move"] = float(np.abs(e.x - e.x[:, :1]).max())
        zero = zero and all(metrics[k] == 0.0 for k in metrics)
    return Report("degenerate_closure", bool(zero), metrics, {"max_abs": 0.0})


# ---------------------------------------------------------------------------
# utility kernel properties
# ---------------------------------------------------------------------------


def trapezoid_phi(model: KappaModel, x, halvings: int = 15, tol: float = 1e-16) -> np.ndarray:
    """Independent oracle for ``phi``: Richardson-extrapolated trapezoid rule.

    Integrates ``exp(-(kappa(x+s) - kappa(x)))`` on ``[0, L]`` with ``L`` far
    past the quadrature's own truncation point, using ``2^halvings`` and
    ``2^(halvings-1)`` intervals.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    length = tail_length(model.kappa_prime_inf, tol)
    n = 2 ** halvings
    s = np.linspace(0.0, length, n + 1)
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        g = np.exp(-model.family.kappa_diff(xi, s))
        fine = np.trapezoid(g, s)
        coarse = np.trapezoid(g[::2], s[::2])
        out[i] = -(fine + (fine - coarse) / 3.0)
    return out


def random_kappa_models(rng: np.random.Generator, count: int) -> list[KappaModel]:
    """Random admissible models: softplus blends and a few linear ones."""
    models = []
    for i in range(count):
        if i % 5 == 4:
            models.append(make_kappa("linear", gamma=float(rng.uniform(0.3, 4.0))))
            continue
        a = float(rng.uniform(0.3, 3.0))
        b = a + float(rng.uniform(0.05, 3.0))
        models.append(
            make_kappa("softplus_blend", a=a, b=b, s=float(rng.uniform(0.2, 4.0)), x0=float(rng.uniform(-3, 3)))
        )
    return models


def kernel_property_check(
    n_probes: int = 1000,
    seed: int = 0,
    n_models: int = 20,
    rtol: float = 1e-8,
    fd_step: float = 1e-4,
    fd_tol: float = 1e-6,
) -> Report:
    """Randomized probes of the bounds, accuracy and monotonicity of the quotients.

    Per probe: ``phi`` inside ``[-1/a, -1/b]`` (``a``, ``b`` the bounds of
    ``kappa'``), relative agreement with :func:`trapezoid_phi`, a forward
    difference of the drift coefficient ``>= -fd_tol`` and of ``-kappa'``
    ``<= fd_tol``.
    """
    rng = np.random.default_rng(seed)
    models = random_kappa_models(rng, n_models)
    per = np.full(n_models, n_probes // n_models)
    per[: n_probes % n_models] += 1
    worst = {"bounds": 0.0, "rel_error": 0.0, "drift_coeff_fd": 0.0, "neg_kappa_prime_fd": 0.0}
    fails = []
    for mi, (model, k) in enumerate(zip(models, per)):
        x = rng.uniform(-10.0, 10.0, int(k))
        q = quotients(model, x)
        q2 = quotients(model, x + fd_step)
        ph = np.asarray(q.phi)
        lo, hi = -1.0 / model.kappa_prime_inf, -1.0 / model.kappa_prime_sup
        slack = 1e-12 * abs(lo)
        out = np.maximum(lo - ph, ph - hi)
        ref = trapezoid_phi(model, x)
        rel = np.abs(ph - ref) / np.abs(ref)
        d_drift = np.asarray(q2.drift_coeff) - np.asarray(q.drift_coeff)
        d_nkp = np.asarray(q2.neg_kappa_prime) - np.asarray(q.neg_kappa_prime)
        worst["bounds"] = max(worst["bounds"], float(out.max()))
        worst["rel_error"] = max(worst["rel_error"], float(rel.max()))
        worst["drift_coeff_fd"] = min(worst["drift_coeff_fd"], float(d_drift.min()))
        worst["neg_kappa_prime_fd"] = max(worst["neg_kappa_prime_fd"], float(d_nkp.max()))
        bad = (out > slack) | (rel > rtol) | (d_drift < -fd_tol) | (d_nkp > fd_tol)
        for j in np.nonzero(bad)[0][:3]:
            fails.append({"model": model.family.to_dict(), "x": float(x[j])})
    return Report(
        "kernel_properties",
        not fails,
        {"n_probes": int(per.sum()), "n_models": n_models, "seed": seed, **{f"worst_{k}": v for k, v in worst.items()}},
        {"rtol": rtol, "fd_step": fd_step, "fd_tol": fd_tol},
        fails,
    )
