"""Run configuration: a single JSON document checked against :data:`SCHEMA`."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .problems import Problem

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}
_ARR = {"anyOf": [_VEC, _MAT]}
_BOUNDS = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required: tuple[str, ...] = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_TERM = {
    "oneOf": [
        _obj({"kind": {"const": "constant"}, "value": _ARR}, ("kind", "value")),
        _obj({"kind": {"const": "affine"}, "offset": _VEC, "matrix": _MAT}, ("kind", "offset", "matrix")),
        _obj(
            {"kind": {"const": "sinusoid"}, "base": _ARR, "amplitude": _ARR, "frequency": _VEC, "phase": _NUM},
            ("kind", "base"),
        ),
    ]
}

_TERMINAL = _obj(
    {
        "kind": {"enum": ["zero", "constant", "sinusoid", "tanh", "linear"]},
        "constant": _NUM, "amp_x": _NUM, "freq_x": _NUM, "phase_x": _NUM, "amp_xtilde": _VEC,
    },
    ("kind",),
)

_UTILITY = {
    "oneOf": [
        _obj({"family": {"const": "linear"}, "gamma": _POS, "c": _NUM}, ("family", "gamma")),
        _obj(
            {"family": {"const": "softplus_blend"}, "a": _POS, "b": _POS, "s": _POS, "x0": _NUM},
            ("family", "a", "b"),
        ),
        _obj({"family": {"const": "tabulated"}, "knots": _VEC, "values": _VEC}, ("family", "knots", "values")),
    ]
}

_DECLARED = {k: {"type": ["number", "null"]} for k in (
    "lip_h_x", "lip_h_xtilde", "lip_theta", "lip_mu", "lip_sigma", "theta_sup", "h_sup", "sigma_sup"
)}

CHECKS = (
    "exponential_oracle",
    "convergence_order",
    "gradient_band",
    "form_equivalence",
    "epsilon_equivalence",
    "martingale",
    "wealth_consistency",
    "degenerate_closure",
    "kernel_properties",
)

SCHEMA = _obj(
    {
        "name": {"type": "string"},
        "utility": _UTILITY,
        "market": _obj(
            {
                "dim_n": {"type": "integer", "minimum": 1, "maximum": 3},
                "dim_d1": {"type": "integer", "minimum": 1},
                "dim_d2": {"type": "integer", "minimum": 0},
                "horizon": _POS,
                "tilde_mu": _TERM,
                "tilde_sigma": _TERM,
                "theta": _TERM,
                "terminal_h": _TERMINAL,
                **_DECLARED,
            },
            ("dim_n", "dim_d1", "tilde_sigma", "theta"),
        ),
        "fbsde": _obj(
            {"form": {"enum": ["P", "B"]}, "epsilon": {"anyOf": [_POS, {"const": "auto"}]}},
        ),
        "grid": _obj(
            {
                "steps": {"type": "integer", "minimum": 1},
                "x_bounds": _BOUNDS,
                "x_count": {"type": "integer", "minimum": 3},
                "xt_bounds": {"type": "array", "items": _BOUNDS, "minItems": 1},
                "xt_counts": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 1},
                "quad_nodes": {"type": "integer", "minimum": 1, "maximum": 40},
                "x0": _NUM,
            },
            ("steps", "x_bounds", "x_count", "xt_bounds", "xt_counts", "quad_nodes"),
        ),
        "solver": _obj(
            {
                "fp_tol": _POS,
                "fp_max": {"type": "integer", "minimum": 1},
                "delta_sing": _POS,
                "band_slack": _POS,
            }
        ),
        "simulate": _obj(
            {
                "n_paths": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "x0": _NUM,
                "xtilde0": _VEC,
                "write_csv": {"type": "boolean"},
            },
        ),
        "verify": _obj(
            {
                "checks": {"type": "array", "items": {"enum": list(CHECKS)}, "uniqueItems": True},
                "field": {"type": "string"},
                "corrupt_shift": _NUM,
                "epsilon_pair": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
                "gradient_tol": _POS,
                "gradient_lower": _NUM,
                "z_threshold": _POS,
                "martingale_paths": {"type": "integer", "minimum": 2},
                "oracle_rtol": _POS,
                "kernel_probes": {"type": "integer", "minimum": 1},
            },
        ),
        "output": _obj({"dir": {"type": "string"}}),
    },
    ("utility", "market", "grid"),
)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration plus the directory it was read from.

    A relative ``verify.field`` path is resolved against that directory.
    """

    doc: dict
    base_dir: Path

    @property
    def name(self) -> str:
        return self.doc.get("name", "run")

    @property
    def form(self) -> str:
        return self.doc.get("fbsde", {}).get("form", "P")

    @property
    def epsilon(self) -> float | None:
        eps = self.doc.get("fbsde", {}).get("epsilon", "auto")
        return None if eps == "auto" else float(eps)

    @property
    def simulate(self) -> dict:
        return {"n_paths": 1000, "seed": 0, "write_csv": True, **self.doc.get("simulate", {})}

    @property
    def verify(self) -> dict:
        return {"checks": [], **self.doc.get("verify", {})}

    @property
    def solver(self) -> dict:
        return dict(self.doc.get("solver", {}))

    def output_dir(self, override: str | Path | None = None) -> Path:
        if override is not None:
            return Path(override)
        # relative output paths are taken from the working directory
        return Path(self.doc.get("output", {}).get("dir", "out"))

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def problem(self) -> Problem:
        return Problem(self.name, dict(self.doc["utility"]), dict(self.doc["market"]), dict(self.doc["grid"]))


def validate_config(doc: dict) -> None:
    """Raise :class:`ConfigError` unless ``doc`` matches the schema and is internally consistent."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    g = doc["grid"]
    n = doc["market"]["dim_n"]
    if len(g["xt_bounds"]) != n or len(g["xt_counts"]) != n:
        raise ConfigError(f"grid needs {n} factor axes (xt_bounds and xt_counts)")
    x0 = doc.get("simulate", {}).get("xtilde0")
    if x0 is not None and len(x0) != n:
        raise ConfigError(f"simulate.xtilde0 must have length {n}")


CONFIG_DIR = Path(__file__).parent / "configs"


def bundled_configs() -> list[str]:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json"))


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a config file; a bare bundled name such as ``exponential`` also works."""
    path = Path(path)
    if not path.exists() and str(path) in bundled_configs():
        path = CONFIG_DIR / f"{path}.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    validate_config(doc)
    return RunConfig(doc, path.resolve().parent)


def problem_config(problem: Problem, **sections) -> dict:
    """Config document for a bundled problem; extra sections are merged in."""
    doc = {
        "name": problem.name,
        "utility": dict(problem.utility),
        "market": json.loads(json.dumps(problem.market)),
        "grid": dict(problem.grid),
    }
    doc["grid"]["xt_bounds"] = [list(b) for b in doc["grid"]["xt_bounds"]]
    doc.update(sections)
    validate_config(doc)
    return doc
