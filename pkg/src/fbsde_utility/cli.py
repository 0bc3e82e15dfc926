"""Command line runner: ``fbsde-utility {solve|simulate|verify|all} --config PATH``.

Exit codes: 0 success, 2 invalid configuration, 3 admissibility gate
failure, 4 singular or non-converged solve or failed simulation,
5 verification failure. Worker count comes from ``--workers`` or
``$FBSDE_UTILITY_WORKERS`` and never changes any output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .decoupling_solver import DecouplingField, SolverOptions, dump_field, load_field, solve_backward
from .errors import ConfigError, DomainTooSmall, FbsdeError, FixedPointFailure, NonFiniteState
from .fbsde_assembly import FbsdeCoefficients, assemble
from .market_model import validate_c2
from .path_simulator import PathEnsemble, export_ensemble_csv, simulate, wealth_consistency
from .utility_kernel import validate_c1
from .validation import CheckResult, ValidationReport
from . import verification as V

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GATE = 3
EXIT_SINGULAR = 4
EXIT_VERIFY = 5

WORKERS_ENV = "FBSDE_UTILITY_WORKERS"


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


class Run:
    """State shared by the pipeline stages of one invocation."""

    def __init__(self, cfg: RunConfig, out: Path, workers: int, echo=print):
        self.cfg = cfg
        self.out = out
        self.workers = workers
        self.echo = echo
        self.problem = cfg.problem()
        try:
            self.kappa = self.problem.kappa()
            self.market = self.problem.market_spec()
            self.coeffs: FbsdeCoefficients = assemble(self.kappa, self.market, cfg.form, cfg.epsilon)
        except (FbsdeError, ValueError) as exc:
            raise _Exit(EXIT_CONFIG, f"invalid model: {exc}") from None
        self.field: DecouplingField | None = None
        self._ensembles: dict[tuple[str, int], PathEnsemble] = {}
        sv = cfg.solver
        self.options = SolverOptions(workers=workers, **sv)

    # gates -------------------------------------------------------------------

    def gates(self) -> None:
        g = self.cfg.doc["grid"]
        lo, hi = g["x_bounds"]
        probe = np.linspace(lo - 10.0, hi + 10.0, 2001)
        c1 = validate_c1(self.kappa, probe)
        c2 = validate_c2(self.market)
        eps = self.coeffs.epsilon
        total = self.market.lip_h_x + eps * self.market.lip_h_xtilde
        scaled = ValidationReport(
            "scaled terminal",
            (CheckResult("L_{H,x} + eps L_{H,x~} < 1", total < 1.0, total, 1.0, detail=f"eps={eps}"),),
        )
        failed = [r for r in (c1, c2, scaled) if not r.passed]
        if failed:
            msg = "; ".join(f"{r.subject}: {c.name} (observed {c.observed:.6g}, bound {c.bound:.6g})"
                            for r in failed for c in r.failures)
            raise _Exit(EXIT_GATE, f"admissibility gate failed: {msg}")

    # stages ------------------------------------------------------------------

    def grid(self, **overrides):
        try:
            return self.problem.build_grid(self.coeffs.epsilon, **overrides)
        except (DomainTooSmall, ValueError) as exc:
            raise _Exit(EXIT_CONFIG, f"invalid grid: {exc}") from None

    def solve(self) -> DecouplingField:
        if self.field is not None:
            return self.field
        vf = self.cfg.verify.get("field")
        if vf is not None:
            f = load_field(self.cfg.resolve(vf))
            self.coeffs = assemble(self.kappa, self.market, f.form, f.epsilon)
            self.echo(f"loaded field {vf} (form {f.form}, epsilon {f.epsilon:.6g})")
        else:
            f, rep = solve_backward(self.coeffs, self.grid(), self.options)
            doc = {
                "problem": self.cfg.name,
                "coefficients": self.coeffs.to_dict(),
                "grid": f.grid.to_dict(),
                "report": rep.to_dict(),
            }
            _write_json(self.out / "solve_report.json", doc)
            dump_field(f, self.out / "field.json")
            self.echo(
                f"solve: {rep.status.value}  form {self.coeffs.form.value}  epsilon {self.coeffs.epsilon:.6g}  "
                f"max lip x {rep.max_lip_x:.6g}  grad x in [{rep.min_grad_x:.6g}, {rep.max_grad_x:.6g}]  "
                f"median iterations {rep.median_iterations:g}"
            )
            if not f.converged:
                raise _Exit(EXIT_SINGULAR, f"solve stopped: {rep.status.value} at t={rep.status_time}")
        shift = self.cfg.verify.get("corrupt_shift")
        if shift:
            f = f.shifted(float(shift))
            self.echo(f"field shifted by {shift} (negative control)")
        self.field = f
        return f

    def start(self) -> tuple[np.ndarray, float]:
        sim = self.cfg.simulate
        n = self.market.dim_n
        xt0 = np.asarray(sim.get("xtilde0", [0.0] * n), dtype=float)
        x0 = float(sim.get("x0", self.cfg.doc["grid"].get("x0", 0.0)))
        return xt0 / self.coeffs.epsilon, x0

    def simulate(self, measure: str | None = None, n_paths: int | None = None, write: bool = True) -> PathEnsemble:
        sim = self.cfg.simulate
        n_paths = sim["n_paths"] if n_paths is None else n_paths
        key = (measure or self.coeffs.form.value, n_paths)
        if key in self._ensembles:
            return self._ensembles[key]
        f = self.solve()
        xc0, x0 = self.start()
        try:
            e = simulate(f, self.coeffs, xc0, x0, n_paths, seed=sim["seed"], measure=measure, workers=self.workers)
        except (FixedPointFailure, NonFiniteState) as exc:
            raise _Exit(EXIT_SINGULAR, f"simulation failed: {exc}") from None
        if write:
            wc = wealth_consistency(e)
            if sim["write_csv"]:
                export_ensemble_csv(e, self.out / "ensemble.csv")
            _write_json(self.out / "simulate_report.json", {
                "n_paths": e.n_paths, "n_steps": e.n_steps, "seed": e.seed, "measure": e.measure,
                "form": e.form, "epsilon": e.epsilon, "wealth_consistency": wc,
                "y0_mean": float(e.y[:, 0].mean()), "max_abs_z": float(np.abs(e.z).max()),
                "marginal_positive": bool((e.marginal > 0).all()),
            })
            self.echo(f"simulate: {e.n_paths} paths  seed {e.seed}  wealth residual {wc['max_abs']:.3g}")
        self._ensembles[key] = e
        return e

    def verify(self) -> bool:
        vc = self.cfg.verify
        checks = vc["checks"]
        f = self.solve()
        reports = []
        eps = self.coeffs.epsilon
        for name in checks:
            if name == "exponential_oracle":
                reports.append(V.oracle_error_check(f, self._oracle(), vc.get("oracle_rtol", 1e-3)))
            elif name == "convergence_order":
                reports.append(V.convergence_order_check(self.problem, self._oracle(), f.grid.n_steps,
                                                         options=self.options))
            elif name == "gradient_band":
                reports.append(V.gradient_bound_check(f, self.market, vc.get("gradient_tol", 0.02),
                                                      vc.get("gradient_lower", -0.99)))
            elif name == "form_equivalence":
                reports.append(V.form_equivalence_check(self.problem, self.grid(), eps, options=self.options))
            elif name == "epsilon_equivalence":
                e1, e2 = vc.get("epsilon_pair", [eps, eps / 2])
                reports.append(V.epsilon_equivalence_check(
                    self.problem, e1, e2, self.problem.build_grid(e1), self.cfg.simulate["seed"],
                    self.coeffs.form.value, options=self.options,
                ))
            elif name == "martingale":
                e = self.simulate("P", vc.get("martingale_paths"), write=False)
                reports.append(V.martingale_diagnostic(e, self.kappa, threshold=vc.get("z_threshold", 3.0)))
            elif name == "wealth_consistency":
                e = self.simulate("P", write=False)
                wc = wealth_consistency(e)
                tol = 1e-10
                reports.append(V.Report("wealth_consistency", wc["max_abs"] <= tol, wc, {"max_abs": tol}))
            elif name == "degenerate_closure":
                reports.append(V.degenerate_closure_check(f, self.simulate("P", write=False)))
            elif name == "kernel_properties":
                reports.append(V.kernel_property_check(vc.get("kernel_probes", 1000), self.cfg.simulate["seed"]))
        meta = {"problem": self.cfg.name, "form": f.form, "epsilon": f.epsilon,
                "corrupt_shift": vc.get("corrupt_shift", 0.0)}
        V.write_reports(reports, self.out / "verification.json", meta)
        for r in reports:
            self.echo(f"verify: {r.line()}  {_headline(r)}")
        return all(r.passed for r in reports)

    def _oracle(self) -> V.OracleSpec:
        u = self.cfg.doc["utility"]
        m = self.cfg.doc["market"]
        th = m["theta"]
        h = m.get("terminal_h", {"kind": "zero"})
        if u["family"] != "linear" or th["kind"] != "constant" or h["kind"] not in ("zero", "constant"):
            raise _Exit(EXIT_CONFIG, "exponential_oracle needs linear utility, constant theta and constant H")
        return V.OracleSpec(u["gamma"], tuple(th["value"]), h.get("constant", 0.0),
                            self.market.horizon, self.market.dim_d1)


def _headline(r: V.Report) -> str:
    keys = ("max_rel_error", "ratio", "max_grad_x", "max_abs_diff", "max_abs_z", "max_abs", "max_abs_u",
            "worst_rel_error")
    parts = [f"{k}={r.metrics[k]:.3g}" for k in keys if isinstance(r.metrics.get(k), (int, float))]
    return "  ".join(parts)


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbsde-utility", description="Solve, simulate and verify utility FBSDEs.")
    p.add_argument("command", choices=["solve", "simulate", "verify", "all"])
    p.add_argument("--config", required=True, help="path to a JSON run configuration")
    p.add_argument("--workers", type=int, default=None, help=f"worker threads (default ${WORKERS_ENV} or 1)")
    p.add_argument("--out", default=None, help="output directory (default: config's output.dir)")
    return p


def run(command: str, config_path: str | Path, workers: int | None = None, out: str | Path | None = None,
        echo=print) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        echo(f"error: {exc}")
        return EXIT_CONFIG
    workers = default_workers() if workers is None else max(1, int(workers))
    out_dir = cfg.output_dir(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        r = Run(cfg, out_dir, workers, echo)
        r.gates()
        r.solve()
        if command in ("simulate", "all"):
            r.simulate()
        if command in ("verify", "all") and not r.verify():
            echo("verification failed")
            return EXIT_VERIFY
    except _Exit as exc:
        echo(f"error: {exc}")
        return exc.code
    except ConfigError as exc:
        echo(f"error: {exc}")
        return EXIT_CONFIG
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.workers, args.out)


if __name__ == "__main__":
    sys.exit(main())
