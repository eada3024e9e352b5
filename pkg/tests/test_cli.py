import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from nbplab.cli import main, run_experiment
from nbplab.config import ConfigError, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_SIM = {
    "kind": "simulate",
    "model": {"preset": "rod", "length": "8"},
    "grid": {"n_cells": "128"},
    "run": {"seed": "5", "replicates": "300", "horizon": "1", "checkpoints": ["0", "0.5", "1"],
            "start": {"r": ["4"], "v": ["1"]}},
}


def _write(tmp_path, cfg, name="exp.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _run(cfg_path, out, *extra):
    buf = io.StringIO()
    code = run_experiment(cfg_path, out, stream_out=buf, **dict(extra))
    return code, buf.getvalue()


def test_validate_exits_zero(tmp_path):
    code, text = _run(CONFIGS / "rod1_validate.json", tmp_path / "out")
    assert code == 0
    assert "[PASS] structural hypotheses" in text
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["passed"] and summary["kind"] == "validate"
    assert "created_utc" not in summary
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(manifest["files"]) == {"data/hypotheses.csv", "data/fission_means.csv"}


def test_unknown_kind_exits_two(tmp_path, capsys):
    p = _write(tmp_path, {**SMALL_SIM, "kind": "teleport"})
    assert main(["--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_schema_errors_exit_two(tmp_path):
    bad = json.loads(json.dumps(SMALL_SIM))
    bad["run"]["horizon"] = 1.5  # numbers must be decimal strings
    assert main(["--config", str(_write(tmp_path, bad)), "--out", str(tmp_path / "o")]) == 2
    missing = json.loads(json.dumps(SMALL_SIM))
    del missing["run"]["seed"]
    assert main(["--config", str(_write(tmp_path, missing)), "--out", str(tmp_path / "o")]) == 2
    assert main(["--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")]) == 2


def test_usage_errors_exit_two(tmp_path):
    assert main(["--out", str(tmp_path)]) == 2
    assert main(["--config", "x.json", "--out", str(tmp_path), "--threads", "0"]) == 2
    assert main(["--config", "x.json", "--out", str(tmp_path), "--seed-override", "-3"]) == 2


def test_config_semantic_checks():
    late = json.loads(json.dumps(SMALL_SIM))
    late["run"]["checkpoints"] = ["0", "2"]
    with pytest.raises(ConfigError):
        parse_config(late)
    nogrid = {k: v for k, v in SMALL_SIM.items() if k != "grid"}
    with pytest.raises(ConfigError, match="grid"):
        parse_config({**nogrid, "kind": "eigen"})
    cfg = parse_config(SMALL_SIM)
    assert list(cfg.checkpoints) == [0.0, 0.5, 1.0]
    assert cfg.with_seed(9).seed == 9


def test_failed_check_exits_one(tmp_path):
    cfg = {"kind": "slln", "model": {"preset": "rod", "length": "8"}, "grid": {"n_cells": "128"},
           "run": {"seed": "3", "replicates": "30", "horizon": "2", "start": {"density": "phi_tilde"}}}
    code, text = _run(_write(tmp_path, cfg), tmp_path / "out")
    assert code == 1
    assert "[FAIL]" in text


def test_outputs_identical_across_thread_counts(tmp_path):
    p = _write(tmp_path, SMALL_SIM)
    assert _run(p, tmp_path / "a", ("threads", 1))[0] == 0
    assert _run(p, tmp_path / "b", ("threads", 3))[0] == 0
    for name in ("data/counts.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["files"] == mb["files"]


def test_seed_override_changes_draws(tmp_path):
    p = _write(tmp_path, SMALL_SIM)
    _run(p, tmp_path / "a")
    _run(p, tmp_path / "b", ("seed_override", 6))
    _run(_write(tmp_path, {**SMALL_SIM, "run": {**SMALL_SIM["run"], "seed": "6"}}, "six.json"), tmp_path / "c")
    a, b, c = ((tmp_path / d / "data/counts.csv").read_bytes() for d in "abc")
    assert a != b and b == c
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed_overridden"]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "nbplab", "--config", str(CONFIGS / "rod1_validate.json"),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert res.stdout.count("[PASS]") >= 1
