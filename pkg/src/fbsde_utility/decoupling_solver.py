"""Backward induction for the Markovian decoupling field ``u(t, xc, x)``.

One explicit step from ``t_{k+1}`` to ``t_k`` at a node ``(xc, x)``::

    Xc' = xc + drift~ dt + dW^T sigma~
    X'  = x  + drift_x(p, z) dt + vol_x(p, z) . dW          p = x + y
    z   = E[u_{k+1}(Xc', X') dW] / dt
    y   = E[u_{k+1}(Xc', X')] - f(t_k, xc, x + y, z) dt

Expectations use a tensor Gauss-Hermite rule in the d Brownian directions.
``(y, z)`` is a fixed point because the wealth volatility depends on both. The
z-update is preconditioned by ``1 + u_x`` in the tradable directions (the
z-map has Jacobian ``-u_x pi1``), and y takes one Newton step per sweep with
the analytic ``df/dp``.

After every step the wealth gradient is recomputed; reaching
``max |u_x| >= 1 - delta_sing`` ends the solve with a singularity status.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.typing import NDArray

from .errors import DomainTooSmall
from .fbsde_assembly import FbsdeCoefficients
from .utility_kernel import quotients

FIELD_FORMAT = "fbsde-utility/decoupling-field"
FIELD_VERSION = 1
MAX_FACTOR_DIM = 3


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform time steps, tensor spatial axes and a normalised Hermite rule.

    Spatial arrays are laid out as ``(n_xt_1, ..., n_xt_N, n_x)``; flattened
    node ``m`` follows C order.
    """

    times: NDArray
    xt_axes: tuple[NDArray, ...]
    x_axis: NDArray
    quad_nodes: NDArray  # (Q, d) standard normal abscissae
    quad_weights: NDArray  # (Q,), sum to one
    hermite_order: int
    x0: float

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def dim_n(self) -> int:
        return len(self.xt_axes)

    @property
    def dim_d(self) -> int:
        return self.quad_nodes.shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.xt_axes) + (len(self.x_axis),)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dx(self) -> float:
        return float(self.x_axis[1] - self.x_axis[0])

    @property
    def axes(self) -> tuple[NDArray, ...]:
        return self.xt_axes + (self.x_axis,)

    def nodes(self) -> tuple[NDArray, NDArray]:
        """Flattened node coordinates ``(xc (M, N), x (M,))``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        xc = np.stack([m.ravel() for m in mesh[:-1]], axis=-1)
        return xc, mesh[-1].ravel()

    def scaled(self, factor: float) -> "Grid":
        """Same grid with every factor axis multiplied by ``factor``."""
        return Grid(
            self.times,
            tuple(a * factor for a in self.xt_axes),
            self.x_axis,
            self.quad_nodes,
            self.quad_weights,
            self.hermite_order,
            self.x0,
        )

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "steps": self.n_steps,
            "xtilde_axes": [[float(a[0]), float(a[-1]), len(a)] for a in self.xt_axes],
            "x_axis": [float(self.x_axis[0]), float(self.x_axis[-1]), len(self.x_axis)],
            "hermite_order": self.hermite_order,
            "dim_d": self.dim_d,
            "x0": self.x0,
        }


def hermite_rule(order: int, dim: int) -> tuple[NDArray, NDArray]:
    """Tensor Gauss-Hermite rule for a standard normal vector of length ``dim``."""
    x, w = hermegauss(order)
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    nodes = np.array(list(itertools.product(x, repeat=dim)), dtype=float).reshape(-1, dim)
    weights = np.array([np.prod(c) for c in itertools.product(w, repeat=dim)], dtype=float)
    return nodes, weights


def build_grid(
    horizon: float,
    steps: int,
    x_bounds: tuple[float, float],
    x_count: int,
    xt_bounds: Sequence[tuple[float, float]],
    xt_counts: Sequence[int],
    quad_nodes: int,
    dim_d: int,
    x0: float | None = None,
    vol_bound: float = 0.0,
) -> Grid:
    """Build a :class:`Grid`.

    The wealth axis must contain ``x0`` (default: its midpoint) with a margin of
    at least ``6 * vol_bound * sqrt(horizon)`` on both sides.

    Raises
    ------
    DomainTooSmall
        If the margin rule fails.
    ValueError
        For fewer than 3 points on an axis, fewer than 2 Hermite nodes, or
        non-increasing bounds.
    """
    if steps < 1 or horizon <= 0:
        raise ValueError("need steps >= 1 and horizon > 0")
    if quad_nodes < 2:
        raise ValueError("need at least 2 Hermite nodes")
    if len(xt_bounds) != len(xt_counts) or len(xt_counts) < 1:
        raise ValueError("need one (bounds, count) pair per factor dimension, N >= 1")
    counts = list(xt_counts) + [x_count]
    bounds = list(xt_bounds) + [x_bounds]
    for (lo, hi), n in zip(bounds, counts):
        if n < 3:
            raise ValueError("every axis needs at least 3 points")
        if not hi > lo:
            raise ValueError(f"axis bounds must be increasing, got ({lo}, {hi})")
    lo, hi = x_bounds
    x0 = 0.5 * (lo + hi) if x0 is None else float(x0)
    margin = 6.0 * vol_bound * np.sqrt(horizon)
    if x0 - margin < lo or x0 + margin > hi:
        raise DomainTooSmall(
            f"wealth axis [{lo}, {hi}] leaves less than {margin:.4g} around x0={x0:.4g}"
        )
    nodes, weights = hermite_rule(quad_nodes, dim_d)
    return Grid(
        times=np.linspace(0.0, horizon, steps + 1),
        xt_axes=tuple(np.linspace(a, b, n) for (a, b), n in zip(xt_bounds, xt_counts)),
        x_axis=np.linspace(lo, hi, x_count),
        quad_nodes=nodes,
        quad_weights=weights,
        hermite_order=quad_nodes,
        x0=x0,
    )


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def _locate(axis: NDArray, v: NDArray) -> tuple[NDArray, NDArray]:
    lo, n = axis[0], len(axis)
    h = (axis[-1] - lo) / (n - 1)
    pos = (v - lo) / h
    near = np.rint(pos)
    pos = np.where(np.abs(pos - near) < 1e-9, near, pos)
    i = np.clip(np.floor(pos), 0, n - 2).astype(np.intp)
    return i, pos - i


def interpolate(values: NDArray, axes: Sequence[NDArray], points: Sequence[NDArray]) -> NDArray:
    """Multilinear interpolation on a uniform tensor grid.

    Outside the box the edge cell is continued linearly, so the slope beyond a
    boundary is the one-sided boundary difference. Points sitting on nodes
    return the stored value exactly.
    """
    locs = [_locate(ax, np.asarray(p, dtype=float)) for ax, p in zip(axes, points)]
    strides = np.cumprod((1,) + tuple(len(a) for a in axes[:0:-1]))[::-1]
    flat = values.reshape(-1)
    out = None
    for corner in itertools.product((0, 1), repeat=len(axes)):
        idx = 0
        wgt = 1.0
        for c, (i, f), st in zip(corner, locs, strides):
            idx = idx + (i + c) * st
            wgt = wgt * (f if c else 1.0 - f)
        term = wgt * flat[idx]
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# field and report
# ---------------------------------------------------------------------------


class SolveStatus(str, Enum):
    CONVERGED = "Converged"
    SINGULARITY = "SingularityDetected"
    FIXED_POINT_FAILURE = "FixedPointFailure"


@dataclass(frozen=True)
class SolverOptions:
    fp_tol: float = 1e-10
    fp_max: int = 50
    delta_sing: float = 0.01
    workers: int = 1
    band_slack: float | None = None  # upper band is lip_h_x + band_slack; default c*(dx + dt)


@dataclass(eq=False)
class DecouplingField:
    """Stored decoupling field; steps before ``first_step`` were not computed."""

    grid: Grid
    values: NDArray  # (K+1, *shape)
    grad_x: NDArray  # (K+1, *shape)
    grad_xt: NDArray  # (K+1, N, *shape)
    lip_history: NDArray  # (K+1,), nan where not retained
    epsilon: float
    form: str
    first_step: int = 0
    z: NDArray | None = None  # (K+1, M, d), solver's z per node

    @property
    def converged(self) -> bool:
        return self.first_step == 0

    def shifted(self, amount: float) -> "DecouplingField":
        """Copy with every stored value moved by ``amount`` (a negative control)."""
        return DecouplingField(
            self.grid, self.values + amount, self.grad_x, self.grad_xt, self.lip_history,
            self.epsilon, self.form, self.first_step, self.z,
        )


@dataclass
class SolveReport:
    status: SolveStatus
    status_time: float | None = None
    status_node: int | None = None
    iteration_hist: list[int] = field(default_factory=list)
    max_lip_x: float = 0.0
    max_lip_xtilde: float = 0.0
    min_grad_x: float = 0.0
    max_grad_x: float = 0.0
    band_upper: float = np.inf
    band_ok: bool = True
    wall_seconds: float = 0.0

    @property
    def lower_margin(self) -> float:
        """Distance of the smallest wealth gradient from -1."""
        return 1.0 + self.min_grad_x

    @property
    def median_iterations(self) -> float:
        h = np.asarray(self.iteration_hist)
        if h.sum() == 0:
            return 0.0
        cdf = np.cumsum(h)
        return float(np.searchsorted(cdf, 0.5 * cdf[-1]))

    @property
    def max_iterations(self) -> int:
        nz = np.nonzero(self.iteration_hist)[0]
        return int(nz[-1]) if nz.size else 0

    def to_dict(self) -> dict:
        # wall time left out: reports must be byte-stable
        return {
            "status": self.status.value,
            "status_time": self.status_time,
            "status_node": self.status_node,
            "iteration_hist": list(map(int, self.iteration_hist)),
            "median_iterations": self.median_iterations,
            "max_lip_x": self.max_lip_x,
            "max_lip_xtilde": self.max_lip_xtilde,
            "min_grad_x": self.min_grad_x,
            "max_grad_x": self.max_grad_x,
            "lower_margin": self.lower_margin,
            "band_upper": self.band_upper,
            "band_ok": self.band_ok,
        }


def estimate_gradient(values: NDArray, grid: Grid) -> tuple[NDArray, NDArray]:
    """Central differences inside, one-sided at the boundary, along every axis.

    Returns ``(grad_x, grad_xt)`` with ``grad_xt`` stacked over factor axes.
    """
    gx = np.gradient(values, grid.dx, axis=-1, edge_order=1)
    gxt = np.stack([
        np.gradient(values, float(ax[1] - ax[0]), axis=j, edge_order=1)
        for j, ax in enumerate(grid.xt_axes)
    ])
    return gx, gxt


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


@dataclass
class _StepContext:
    c: FbsdeCoefficients
    grid: Grid
    t: float
    dt: float
    u_next: NDArray
    xc: NDArray
    x: NDArray
    xc_next: NDArray  # (M, Q, N)
    th1: NDArray  # (M, d)
    precond: NDArray  # (M,)
    dW: NDArray  # (Q, d)
    opts: SolverOptions


def _solve_nodes(ctx: _StepContext, nodes: NDArray, y: NDArray, z: NDArray) -> tuple[NDArray, NDArray, NDArray]:
    """Fixed-point sweeps for a block of nodes; returns ``(y, z, iterations)``."""
    c, g, dt, opts = ctx.c, ctx.grid, ctx.dt, ctx.opts
    w, dW = g.quad_weights, ctx.dW
    d1 = c.dim_d1
    y = y.copy()
    z = z.copy()
    iters = np.zeros(len(nodes), dtype=np.int64)
    active = np.arange(len(nodes))
    axes = g.axes
    for _ in range(opts.fp_max):
        if active.size == 0:
            break
        m = nodes[active]
        xc, x = ctx.xc[m], ctx.x[m]
        ya, za = y[active], z[active]
        p = x + ya
        q = quotients(c.kappa, p)
        vol = c.forward_vol_x(ctx.t, xc, p, za, q)
        drift = c.forward_drift_x(ctx.t, xc, p, za, q)
        x_next = x[:, None] + drift[:, None] * dt + (dW[None, :, :] * vol[:, None, :]).sum(axis=-1)
        xc_next = ctx.xc_next[m]
        u = interpolate(ctx.u_next, axes, [xc_next[..., j] for j in range(g.dim_n)] + [x_next])
        uw = u * w
        eu = uw.sum(axis=-1)
        z_raw = (uw[:, :, None] * dW[None, :, :]).sum(axis=1) / dt
        step = z_raw - za
        step[:, :d1] /= ctx.precond[m][:, None]
        z_new = za + step
        f = c.driver(ctx.t, xc, p, z_new, q)
        fp = c.driver_dp(ctx.t, xc, p, z_new, q)
        y_new = ya - (ya - eu + f * dt) / (1.0 + fp * dt)
        err = np.maximum(np.abs(z_new - za).max(axis=-1), np.abs(y_new - ya))
        y[active], z[active] = y_new, z_new
        iters[active] += 1
        active = active[~(err < opts.fp_tol)]
    iters[active] = -1
    return y, z, iters


def solve_backward(
    c: FbsdeCoefficients, g: Grid, opts: SolverOptions | None = None
) -> tuple[DecouplingField, SolveReport]:
    """Compute the decoupling field on ``g`` by backward induction.

    Never raises for numerical trouble: a singular gradient or a node whose
    fixed point does not settle is reported in :class:`SolveReport` and the
    field keeps only the steps computed so far.
    """
    opts = opts or SolverOptions()
    if g.dim_n != c.dim_n or g.dim_d != c.dim_d:
        raise ValueError("grid dimensions do not match the coefficient set")
    if c.dim_n > MAX_FACTOR_DIM:
        raise ValueError(f"grid solver supports N <= {MAX_FACTOR_DIM}, got {c.dim_n}")
    started = time.perf_counter()
    K = g.n_steps
    shape = g.shape
    M = g.size
    d = g.dim_d
    xc, x = g.nodes()

    values = np.full((K + 1,) + shape, np.nan)
    grad_x = np.full((K + 1,) + shape, np.nan)
    grad_xt = np.full((K + 1, g.dim_n) + shape, np.nan)
    lip = np.full(K + 1, np.nan)
    zs = np.full((K + 1, M, d), np.nan)

    values[K] = c.terminal(xc, x).reshape(shape)
    grad_x[K], grad_xt[K] = estimate_gradient(values[K], g)
    lip[K] = np.abs(grad_x[K]).max()
    zs[K] = 0.0
    slack = opts.band_slack if opts.band_slack is not None else 2.0 * (g.dx + g.dt)
    band_upper = c.market.lip_h_x + slack

    report = SolveReport(SolveStatus.CONVERGED, band_upper=band_upper)
    hist = np.zeros(opts.fp_max + 1, dtype=np.int64)
    first = K
    workers = max(1, int(opts.workers))
    chunks = [a for a in np.array_split(np.arange(M), workers) if a.size]
    pool = ThreadPoolExecutor(workers) if workers > 1 else None

    if lip[K] >= 1.0 - opts.delta_sing:
        report.status, report.status_time = SolveStatus.SINGULARITY, float(g.times[K])
    else:
        try:
            for k in range(K - 1, -1, -1):
                t = float(g.times[k])
                dt = float(g.times[k + 1] - g.times[k])
                dW = np.sqrt(dt) * g.quad_nodes
                mu = c.forward_drift_xtilde(t, xc)
                sig = c.forward_vol_xtilde(t, xc)
                xc_next = xc[:, None, :] + mu[:, None, :] * dt + (dW[None, :, :, None] * sig[:, None, :, :]).sum(axis=2)
                gx_node = grad_x[k + 1].reshape(-1)
                ctx = _StepContext(
                    c, g, t, dt, values[k + 1], xc, x, xc_next, c.theta1(t, xc),
                    np.maximum(1.0 + gx_node, 0.05), dW, opts,
                )
                y0 = values[k + 1].reshape(-1)
                z0 = zs[k + 1]
                if pool is None:
                    results = [_solve_nodes(ctx, chunks[0], y0[chunks[0]], z0[chunks[0]])]
                else:
                    results = list(pool.map(lambda idx: _solve_nodes(ctx, idx, y0[idx], z0[idx]), chunks))
                y = np.concatenate([r[0] for r in results])
                z = np.concatenate([r[1] for r in results])
                it = np.concatenate([r[2] for r in results])
                failed = np.nonzero(it < 0)[0]
                if failed.size:
                    report.status = SolveStatus.FIXED_POINT_FAILURE
                    report.status_time, report.status_node = t, int(failed[0])
                    break
                hist += np.bincount(it, minlength=hist.size)[: hist.size]
                values[k] = y.reshape(shape)
                zs[k] = z
                grad_x[k], grad_xt[k] = estimate_gradient(values[k], g)
                lip[k] = np.abs(grad_x[k]).max()
                first = k
                if lip[k] >= 1.0 - opts.delta_sing:
                    report.status, report.status_time = SolveStatus.SINGULARITY, t
                    break
        finally:
            if pool is not None:
                pool.shutdown()

    kept = slice(first, K + 1)
    report.iteration_hist = hist.tolist()
    report.max_lip_x = float(np.nanmax(lip[kept]))
    report.max_lip_xtilde = float(np.abs(grad_xt[kept]).max())
    report.min_grad_x = float(grad_x[kept].min())
    report.max_grad_x = float(grad_x[kept].max())
    report.band_ok = bool(report.max_grad_x <= band_upper and report.min_grad_x > -1.0)
    report.wall_seconds = time.perf_counter() - started
    field_ = DecouplingField(g, values, grad_x, grad_xt, lip, c.epsilon, c.form.value, first, zs)
    return field_, report


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _time_weights(grid: Grid, t: float) -> tuple[int, float]:
    T = grid.horizon
    if not (0.0 <= t <= T + 1e-12):
        raise ValueError(f"t={t} outside [0, {T}]")
    pos = t / grid.dt
    near = round(pos)
    if abs(pos - near) < 1e-9:
        pos = float(near)
    k = min(int(np.floor(pos)), grid.n_steps - 1)
    return k, pos - k


def _eval_stack(stack: NDArray, grid: Grid, t: float, xc, x) -> NDArray:
    xc = np.asarray(xc, dtype=float)
    x = np.asarray(x, dtype=float)
    pts = [xc[..., j] for j in range(grid.dim_n)] + [x]
    k, f = _time_weights(grid, t)
    lo = interpolate(stack[k], grid.axes, pts)
    if f == 0.0:
        return lo
    hi = interpolate(stack[k + 1], grid.axes, pts)
    if f == 1.0:
        return hi
    return (1.0 - f) * lo + f * hi


def evaluate_field(f: DecouplingField, t: float, xc, x) -> NDArray:
    """``u(t, xc, x)``: multilinear in space, linear in time, linear continuation outside."""
    return _eval_stack(f.values, f.grid, t, xc, x)


def evaluate_gradient(f: DecouplingField, t: float, xc, x) -> tuple[NDArray, NDArray]:
    """Interpolated ``(u_x, grad_xc u)``; the second has a trailing axis of length N."""
    gx = _eval_stack(f.grad_x, f.grid, t, xc, x)
    gxt = np.stack([_eval_stack(f.grad_xt[:, j], f.grid, t, xc, x) for j in range(f.grid.dim_n)], axis=-1)
    return gx, gxt


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _finite_or_none(a: NDArray) -> list:
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float).ravel()]


def dump_field(f: DecouplingField, path: str | Path) -> None:
    """Write the field as JSON (format ``fbsde-utility/decoupling-field`` v1).

    Keys: ``format``, ``version``, ``epsilon``, ``form``, ``first_step``,
    ``grid`` (horizon, steps, factor and wealth axes as ``[lo, hi, count]``,
    Hermite order, d, x0), ``lip_history`` (length K+1, null where not
    computed) and ``values`` (K+1 rows of the C-ordered spatial grid, null
    where not computed). Gradients are rebuilt on load.
    """
    g = f.grid
    doc = {
        "format": FIELD_FORMAT,
        "version": FIELD_VERSION,
        "epsilon": f.epsilon,
        "form": f.form,
        "first_step": f.first_step,
        "grid": g.to_dict(),
        "lip_history": _finite_or_none(f.lip_history),
        "values": [_finite_or_none(row) for row in f.values.reshape(g.n_steps + 1, -1)],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_field(path: str | Path) -> DecouplingField:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FIELD_FORMAT or doc.get("version") != FIELD_VERSION:
        raise ValueError(f"{path} is not a version {FIELD_VERSION} decoupling-field dump")
    gd = doc["grid"]
    nodes, weights = hermite_rule(gd["hermite_order"], gd["dim_d"])
    g = Grid(
        times=np.linspace(0.0, gd["horizon"], gd["steps"] + 1),
        xt_axes=tuple(np.linspace(lo, hi, n) for lo, hi, n in gd["xtilde_axes"]),
        x_axis=np.linspace(*gd["x_axis"][:2], gd["x_axis"][2]),
        quad_nodes=nodes,
        quad_weights=weights,
        hermite_order=gd["hermite_order"],
        x0=gd["x0"],
    )
    K = g.n_steps
    values = np.array(doc["values"], dtype=float).reshape((K + 1,) + g.shape)
    grad_x = np.full_like(values, np.nan)
    grad_xt = np.full((K + 1, g.dim_n) + g.shape, np.nan)
    first = int(doc["first_step"])
    for k in range(first, K + 1):
        grad_x[k], grad_xt[k] = estimate_gradient(values[k], g)
    lip = np.array([np.nan if v is None else v for v in doc["lip_history"]], dtype=float)
    return DecouplingField(g, values, grad_x, grad_xt, lip, float(doc["epsilon"]), doc["form"], first)


def export_slice_csv(f: DecouplingField, k: int, path: str | Path) -> None:
    """CSV of step ``k``: columns ``xc_1..xc_N, x, u, du_dx``."""
    xc, x = f.grid.nodes()
    cols = [xc[:, j] for j in range(f.grid.dim_n)] + [x, f.values[k].ravel(), f.grad_x[k].ravel()]
    header = ",".join([f"xc_{j + 1}" for j in range(f.grid.dim_n)] + ["x", "u", "du_dx"])
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, np.column_stack(cols), fmt="%.17g", delimiter=",", newline="\n")
