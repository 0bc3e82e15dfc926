from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from fbsde_utility.cli import EXIT_CONFIG, EXIT_GATE, EXIT_OK, EXIT_SINGULAR, EXIT_VERIFY, main, run
from fbsde_utility.config import SCHEMA, bundled_configs, load_config, validate_config
from fbsde_utility.errors import ConfigError

FIXTURES = Path(__file__).parent / "fixtures"


def small_config(**edits) -> dict:
    doc = json.loads((FIXTURES / "exponential_small.json").read_text())
    for path, value in edits.items():
        node = doc
        keys = path.split("__")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    return doc


def write(tmp_path: Path, doc: dict, name: str = "cfg.json") -> Path:
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def quiet(*_):
    pass


class TestConfig:
    def test_bundled_configs_validate(self):
        names = bundled_configs()
        assert {"exponential", "degenerate", "sine_softplus", "factor_softplus"} <= set(names)
        for n in names:
            assert load_config(n).name == n

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="grid"):
            validate_config(small_config(grid__spacing=0.1))

    def test_factor_axis_count(self):
        with pytest.raises(ConfigError):
            validate_config(small_config(grid__xt_counts=[3, 3]))

    def test_schema_is_closed(self):
        assert SCHEMA["additionalProperties"] is False

    def test_auto_epsilon(self):
        cfg = load_config(FIXTURES / "exponential_small.json")
        assert cfg.epsilon is None


class TestRun:
    def test_solve_exponential(self, tmp_path):
        code = run("solve", "exponential", out=tmp_path, echo=quiet)
        assert code == EXIT_OK
        assert (tmp_path / "field.json").exists()
        rep = json.loads((tmp_path / "solve_report.json").read_text())
        assert rep["coefficients"]["epsilon"] == 1.0
        assert rep["report"]["status"] == "Converged"

    def test_gate_rejects_unit_slope(self, tmp_path):
        doc = small_config(market__terminal_h={"kind": "linear", "amp_x": 1.0}, market__lip_h_x=1.0)
        lines = []
        code = run("solve", write(tmp_path, doc), out=tmp_path, echo=lines.append)
        assert code == EXIT_GATE
        assert "L_{H,x} < 1" in lines[-1]

    def test_singularity_exit(self, tmp_path):
        doc = small_config(market__terminal_h={"kind": "linear", "amp_x": 0.995})
        assert run("solve", write(tmp_path, doc), out=tmp_path, echo=quiet) == EXIT_SINGULAR

    def test_invalid_config_exit(self, tmp_path):
        assert run("solve", write(tmp_path, small_config(fbsde__form="Q")), out=tmp_path, echo=quiet) == EXIT_CONFIG
        assert run("solve", tmp_path / "missing.json", out=tmp_path, echo=quiet) == EXIT_CONFIG
        bad_model = small_config(utility={"family": "softplus_blend", "a": 2.0, "b": 1.0})
        assert run("solve", write(tmp_path, bad_model), out=tmp_path, echo=quiet) == EXIT_CONFIG

    def test_domain_too_small_exit(self, tmp_path):
        doc = small_config(grid__x_bounds=[-0.1, 0.1])
        assert run("solve", write(tmp_path, doc), out=tmp_path, echo=quiet) == EXIT_CONFIG

    def test_oracle_needs_exponential_setup(self, tmp_path):
        doc = small_config(utility={"family": "softplus_blend", "a": 1.0, "b": 2.0})
        assert run("verify", write(tmp_path, doc), out=tmp_path, echo=quiet) == EXIT_CONFIG

    def test_verify_corrupted_fixture(self, tmp_path):
        doc = small_config(verify__field=str(FIXTURES / "exponential_small_corrupted.json"))
        code = run("verify", write(tmp_path, doc), out=tmp_path, echo=quiet)
        assert code == EXIT_VERIFY
        rep = json.loads((tmp_path / "verification.json").read_text())
        assert not rep["passed"]
        assert [c["passed"] for c in rep["checks"]] == [False, False]

    def test_verify_shift_control(self, tmp_path):
        doc = small_config(verify__corrupt_shift=0.05)
        assert run("verify", write(tmp_path, doc), out=tmp_path, echo=quiet) == EXIT_VERIFY

    def test_all_writes_everything(self, tmp_path):
        code = run("all", FIXTURES / "exponential_small.json", out=tmp_path, echo=quiet)
        assert code == EXIT_OK
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["ensemble.csv", "field.json", "simulate_report.json", "solve_report.json",
                         "verification.json"]
        header = (tmp_path / "ensemble.csv").read_text().splitlines()[0]
        assert header.startswith("path,t,xc_1,x,y,")

    def test_workers_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FBSDE_UTILITY_WORKERS", "2")
        run("all", FIXTURES / "exponential_small.json", out=tmp_path / "a", echo=quiet)
        run("all", FIXTURES / "exponential_small.json", workers=1, out=tmp_path / "b", echo=quiet)
        for p in (tmp_path / "a").iterdir():
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_main_argv(self, tmp_path, capsys):
        code = main(["solve", "--config", str(FIXTURES / "exponential_small.json"), "--out", str(tmp_path)])
        assert code == EXIT_OK
        assert "Converged" in capsys.readouterr().out

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "fbsde_utility", "solve", "--config", str(FIXTURES / "exponential_small.json"),
             "--out", str(tmp_path)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
