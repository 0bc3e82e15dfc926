"""Forward Euler-Maruyama simulation driven by a solved decoupling field.

Along a path the backward state is read off the field, ``Y = u(t, Xc, X)``,
and ``Z`` solves ``z = grad(u) . sigma(t, xc, x, y, z)``. Only the wealth
volatility depends on ``z`` and it does so linearly, so the fixed point has
the closed form::

    pi2(z) = pi2(grad_xc(u) sigma~)
    pi1(z) = (pi1(grad_xc(u) sigma~) - u_x pi1(theta) phi(p)) / (1 + u_x)

which exists whenever ``u_x > -1``, the regime the solver guarantees.

Every path owns a random stream keyed by ``(seed, path index)``, and all
per-path arithmetic is row-wise, so an ensemble does not depend on how paths
are split across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .decoupling_solver import DecouplingField, evaluate_field, evaluate_gradient
from .errors import FixedPointFailure, NonFiniteState
from .fbsde_assembly import FbsdeCoefficients, Form
from .market_model import MarketSpec
from .utility_kernel import KappaModel, phi, quotients


@dataclass(eq=False)
class PathEnsemble:
    """Simulated paths; arrays are indexed ``(path, step, ...)``.

    ``dW`` always holds increments of W, whichever Brownian motion the raw
    draws represented (``measure``). ``terminal`` is the exact liability
    ``H(eps Xc_T, X_T)`` at the end of each path.
    """

    times: NDArray  # (K+1,)
    xc: NDArray  # (P, K+1, N)
    x: NDArray  # (P, K+1)
    y: NDArray  # (P, K+1)
    z: NDArray  # (P, K+1, d)
    pi_star: NDArray  # (P, K+1, d)
    marginal: NDArray  # (P, K+1)
    dW: NDArray  # (P, K, d)
    theta1: NDArray  # (P, K+1, d)
    terminal: NDArray  # (P,)
    seed: int
    dt: float
    measure: str
    form: str
    epsilon: float
    dim_d1: int

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x.shape[1] - 1


def optimal_strategy(u: KappaModel, theta: ArrayLike, p: ArrayLike, z: ArrayLike, d1: int) -> NDArray:
    """``-pi1(theta) phi(p) - pi1(z)``; the untradable components are zero."""
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    ph = np.asarray(phi(u, p))[..., None]
    out = -(theta * ph) - z
    out[..., d1:] = 0.0
    return out


def path_normals(seed: int, start: int, stop: int, n_steps: int, d: int) -> NDArray:
    """Standard normals of shape ``(stop - start, n_steps, d)`` from per-path streams."""
    out = np.empty((stop - start, n_steps, d))
    for i in range(start, stop):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        out[i - start] = rng.standard_normal((n_steps, d))
    return out


def _resolve_z(c: FbsdeCoefficients, t: float, xc, x, y, gx, gxc, th1, ph) -> NDArray:
    sig = c.forward_vol_xtilde(t, xc)  # (P, d, N)
    base = (sig * gxc[:, None, :]).sum(axis=-1)  # (P, d)
    d1 = c.dim_d1
    denom = 1.0 + gx
    if np.any(denom <= 0):
        bad = int(np.argmax(denom <= 0))
        raise FixedPointFailure(f"1 + u_x = {denom[bad]:.3g} <= 0 at t={t:.6g}, path offset {bad}")
    z = base.copy()
    z[:, :d1] = (base[:, :d1] - (gx * ph)[:, None] * th1[:, :d1]) / denom[:, None]
    return z


def _simulate_block(
    f: DecouplingField, c: FbsdeCoefficients, xc0: NDArray, x0: float, normals: NDArray, from_w: bool, first: int
) -> dict:
    P, K, d = normals.shape
    N = c.dim_n
    dt = f.grid.dt
    times = f.grid.times
    sq = np.sqrt(dt)
    d1 = c.dim_d1

    xc = np.empty((P, K + 1, N))
    x = np.empty((P, K + 1))
    y = np.empty((P, K + 1))
    z = np.empty((P, K + 1, d))
    pis = np.empty((P, K + 1, d))
    marg = np.empty((P, K + 1))
    th = np.empty((P, K + 1, d))
    dW = np.empty((P, K, d))

    cur_xc = np.broadcast_to(xc0, (P, N)).astype(float)
    cur_x = np.full(P, float(x0))
    for n in range(K + 1):
        t = float(times[n])
        if not (np.isfinite(cur_xc).all() and np.isfinite(cur_x).all()):
            bad = int(np.argmax(~(np.isfinite(cur_x) & np.isfinite(cur_xc).all(axis=-1))))
            raise NonFiniteState(f"state left the representable range at t={t:.6g} on path {first + bad}")
        yy = evaluate_field(f, t, cur_xc, cur_x)
        gx, gxc = evaluate_gradient(f, t, cur_xc, cur_x)
        p = cur_x + yy
        q = quotients(c.kappa, p)
        ph = np.asarray(q.phi)
        th1 = c.theta1(t, cur_xc)
        zz = _resolve_z(c, t, cur_xc, cur_x, yy, gx, gxc, th1, ph)
        pi = -(th1 * ph[:, None]) - zz
        pi[:, d1:] = 0.0

        xc[:, n], x[:, n], y[:, n], z[:, n], pis[:, n], th[:, n] = cur_xc, cur_x, yy, zz, pi, th1
        marg[:, n] = -ph * np.exp(-c.kappa.kappa(p))  # U' = phi U''
        if n == K:
            break

        draw = normals[:, n] * sq
        if from_w:
            dw = draw
            db = dw + th1 * dt
        else:
            db = draw
            dw = db - th1 * dt
        dW[:, n] = dw
        # own Brownian motion of the assembled form drives the Euler step
        inc = db if c.form is Form.B else dw
        drift_c = c.forward_drift_xtilde(t, cur_xc)
        sig = c.forward_vol_xtilde(t, cur_xc)
        vol_x = c.forward_vol_x(t, cur_xc, p, zz, q)
        drift_x = c.forward_drift_x(t, cur_xc, p, zz, q)
        cur_xc = cur_xc + drift_c * dt + (inc[:, :, None] * sig).sum(axis=1)
        cur_x = cur_x + drift_x * dt + (vol_x * inc).sum(axis=-1)

    terminal = np.asarray(c.terminal(xc[:, K], x[:, K]), dtype=float)
    return {
        "xc": xc, "x": x, "y": y, "z": z, "pi_star": pis, "marginal": marg,
        "dW": dW, "theta1": th, "terminal": terminal,
    }


def simulate(
    f: DecouplingField,
    c: FbsdeCoefficients,
    xc0: ArrayLike,
    x0: float,
    n_paths: int,
    n_steps: int | None = None,
    seed: int = 0,
    measure: str | None = None,
    workers: int = 1,
) -> PathEnsemble:
    """Simulate ``n_paths`` paths on the field's time grid.

    Parameters
    ----------
    f, c
        Converged field and the coefficients it was solved with.
    xc0, x0
        Initial scaled factor state and wealth.
    n_steps
        Must equal the field's step count when given; paths live on the solver grid.
    measure
        Brownian motion the raw draws are increments of, ``"P"`` (W) or ``"B"``
        (``B = W + int pi1(theta) dt``). Defaults to the form's own one. Draws
        are converted with ``dB = dW + pi1(theta) dt`` at the current state, so
        the same seed gives the same paths in either form.
    """
    if not f.converged:
        raise ValueError("field did not converge on the whole time grid")
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    K = f.grid.n_steps
    if n_steps is not None and n_steps != K:
        raise ValueError(f"n_steps={n_steps} differs from the field's {K} steps")
    measure = (measure or Form(c.form).value).upper()
    if measure not in ("P", "B"):
        raise ValueError(f"measure must be 'P' or 'B', got {measure!r}")
    xc0 = np.asarray(xc0, dtype=float).reshape(c.dim_n)
    d = c.dim_d

    workers = max(1, min(int(workers), n_paths))
    bounds = np.linspace(0, n_paths, workers + 1).astype(int)

    def run(j: int) -> dict:
        lo, hi = int(bounds[j]), int(bounds[j + 1])
        normals = path_normals(seed, lo, hi, K, d)
        return _simulate_block(f, c, xc0, x0, normals, measure == "P", lo)

    if workers == 1:
        parts = [run(0)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(workers)))
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return PathEnsemble(
        times=f.grid.times.copy(), seed=int(seed), dt=f.grid.dt, measure=measure,
        form=Form(c.form).value, epsilon=c.epsilon, dim_d1=c.dim_d1, **cat,
    )


def wealth_consistency(e: PathEnsemble) -> dict:
    """Residual between recorded wealth increments and ``pi* . (dW + theta dt)``.

    The second expression is the gain of holding ``pi*`` in assets with
    ``dS/S = dW + theta dt``.
    """
    dx = np.diff(e.x, axis=1)
    implied = (e.pi_star[:, :-1] * (e.dW + e.theta1[:, :-1] * e.dt)).sum(axis=-1)
    r = np.abs(dx - implied)
    return {"max_abs": float(r.max(initial=0.0)), "mean_abs": float(r.mean()) if r.size else 0.0}


def export_ensemble_csv(e: PathEnsemble, path: str | Path) -> None:
    """CSV with columns ``path, t, xc_1..xc_N, x, y, z_1..z_d, pi_star_1..pi_star_d, marginal``."""
    P, K1 = e.x.shape
    N = e.xc.shape[-1]
    d = e.z.shape[-1]
    header = (
        ["path", "t"] + [f"xc_{j + 1}" for j in range(N)] + ["x", "y"]
        + [f"z_{j + 1}" for j in range(d)] + [f"pi_star_{j + 1}" for j in range(d)] + ["marginal"]
    )
    cols = np.column_stack([
        np.repeat(np.arange(P), K1).astype(float),
        np.tile(e.times, P),
        e.xc.reshape(P * K1, N),
        e.x.reshape(-1),
        e.y.reshape(-1),
        e.z.reshape(P * K1, d),
        e.pi_star.reshape(P * K1, d),
        e.marginal.reshape(-1),
    ])
    fmt = ["%d"] + ["%.17g"] * (cols.shape[1] - 1)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, cols, fmt=fmt, delimiter=",", newline="\n")


def z_bound(f: DecouplingField, c: FbsdeCoefficients, m: MarketSpec | None = None) -> float:
    """A priori bound on ``|Z|`` along simulated paths from the field's gradient bounds."""
    m = c.market if m is None else m
    gx = np.nanmax(np.abs(f.grad_x))
    gxc = np.nanmax(np.abs(f.grad_xt)) if f.grad_xt.size else 0.0
    sig = m.sigma_sup / c.epsilon
    factor = gxc * sig * np.sqrt(c.dim_n)
    lo = 1.0 - np.nanmax(np.maximum(-f.grad_x, 0.0))
    return float((factor + gx * c.x_vol_bound()) / max(lo, 1e-12) + factor)
