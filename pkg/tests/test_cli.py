import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from cqedinfo.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    load_config,
    main,
    parse_angle,
    validate_config,
)
from cqedinfo.errors import ConfigError, DomainError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

ORACLE = """
experiment = "series-oracle"
seed = 7
"""

PHOTO = """
experiment = "photocurrent-mean"
E = 3.0
g = 1.0
n_steps = 50
n_traj = 40
seed = 1
"""

NUMERICAL = """
experiment = "bayes-rate-mc"
E = 0.01
g = 0.001
kappa = 0.01
v0_sq = 50.0
n_steps = 1000
slow_n_steps = 10
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_every_shipped_config_validates():
    paths = sorted(CONFIGS.glob("*.toml"))
    assert len(paths) >= 9
    for path in paths:
        cfg = load_config(path)
        assert cfg.experiment


@pytest.mark.parametrize(
    "text, field",
    [
        ('experiment = "entropy-rate-mc"\ng = 1.0', "E"),
        ('experiment = "entropy-rate-mc"\nE = 10.0\ng = 1.0\neta = 1.5', "eta"),
        ('experiment = "entropy-rate-mc"\nE = 10.0\ng = 1.0\nbogus = 3', "bogus"),
        ('experiment = "entropy-rate-mc"\nE = "ten"\ng = 1.0', "E"),
        ('experiment = "entropy-rate-mc"\nE = 10.0\ng = 1.0\nn_traj = 2.5', "n_traj"),
        ('experiment = "entropy-rate-mc"\nE = 10.0\ng = 1.0\nkappa = 0', "kappa"),
        ('experiment = "entropy-rate-mc"\nE = 10.0\ng = 1.0\nformat = "xml"', "format"),
        ('experiment = "nope"\nE = 10.0\ng = 1.0', "experiment"),
        ('experiment = "bayes-rate-mc"\nE = 10.0\ng = 1.0', "v0_sq"),
        ('experiment = "steady-state-validation"\ng = 1.0\nE_values = []', "E_values"),
        ('E = 10.0\ng = 1.0', "experiment"),
        ("experiment = [", "TOML"),
    ],
)
def test_bad_configs_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field):
        validate_config(text)


def test_coupling_beyond_strong_driving_is_a_domain_error():
    with pytest.raises(DomainError):
        validate_config('experiment = "entropy-rate-mc"\nE = 10.0\ng = 25.0')
    with pytest.raises(DomainError):
        validate_config('experiment = "steady-state-validation"\ng = 5.0\nE_values = [10.0, 2.0]')


def test_defaults_and_angles():
    cfg = validate_config('experiment = "entropy-rate-mc"\nE = 10.0\ng = 1.0\nphi = "pi/2"')
    assert cfg.params.phi == pytest.approx(math.pi / 2)
    assert cfg.params.kappa == 1.0 and cfg.params.eta == 1.0
    assert cfg.n_traj == 10_000 and cfg.delta_t == 1e-4 and cfg.seed == 0
    assert parse_angle("3pi/8") == pytest.approx(3 * math.pi / 8)
    assert parse_angle("pi") == pytest.approx(math.pi)
    assert parse_angle(0.25) == 0.25
    with pytest.raises(ConfigError):
        parse_angle("tau")
    with pytest.raises(AttributeError):
        cfg.not_a_knob


def test_run_is_byte_identical_for_a_seed(tmp_path):
    cfg = write(tmp_path, "photo.toml", PHOTO)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}.csv"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    out = tmp_path / "o2.csv"
    main(["run", "--config", str(cfg), "--out", str(out), "--seed", "2"])
    assert out.read_bytes() != outs[0]


def test_csv_output_layout(tmp_path, capsys):
    cfg = write(tmp_path, "oracle.toml", ORACLE)
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    meta = [ln for ln in lines if ln.startswith("#")]
    keys = [ln[2:].split(":")[0] for ln in meta]
    assert keys[:4] == ["experiment", "config", "code_version", "rng"]
    assert "passed" in keys
    header = lines[len(meta)].split(",")
    assert "series_value" in header and "finite_difference" in header
    assert "series-oracle: PASS" in captured.err


def test_json_output(tmp_path):
    cfg = write(tmp_path, "oracle.toml", ORACLE)
    out = tmp_path / "o.json"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--format", "json"]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["experiment"] == "series-oracle" and doc["passed"] is True
    assert doc["config"]["seed"] == 7
    assert doc["rows"][0]["abs_difference"] < 1e-4


def test_run_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, "bad.toml", 'experiment = "entropy-rate-mc"\nE = 10.0\ng = 25.0')
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    num = write(tmp_path, "num.toml", NUMERICAL)
    assert main(["run", "--config", str(num)]) == EXIT_NUMERICAL
    assert "InvalidUpdate" in capsys.readouterr().err


def test_all_reports_every_config(tmp_path, capsys):
    cfg_dir = tmp_path / "cfg"
    cfg_dir.mkdir()
    write(cfg_dir, "a.toml", ORACLE)
    write(cfg_dir, "b.toml", PHOTO)
    assert main(["all", "--config-dir", str(cfg_dir)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["all_passed"] is True
    assert [r["status"] for r in report["results"]] == ["passed", "passed"]
    assert (cfg_dir / "results" / "a.csv").exists() and (cfg_dir / "results" / "b.csv").exists()

    write(cfg_dir, "c.toml", ORACLE + "n_terms = 1\n")
    assert main(["all", "--config-dir", str(cfg_dir), "--out-dir", str(tmp_path / "out")]) == EXIT_CHECK_FAILED
    report = json.loads(capsys.readouterr().out)
    assert report["results"][2]["status"] == "failed" and not report["all_passed"]

    write(cfg_dir, "d.toml", NUMERICAL)
    assert main(["all", "--config-dir", str(cfg_dir), "--out-dir", str(tmp_path / "out")]) == EXIT_NUMERICAL
    capsys.readouterr()
    write(cfg_dir, "e.toml", "experiment = 3")
    assert main(["all", "--config-dir", str(cfg_dir), "--out-dir", str(tmp_path / "out")]) == EXIT_CONFIG
    capsys.readouterr()
    assert main(["all", "--config-dir", str(tmp_path / "empty")]) == EXIT_CONFIG


def test_console_script_module_entry(tmp_path):
    cfg = write(tmp_path, "oracle.toml", ORACLE)
    proc = subprocess.run(
        [sys.executable, "-m", "cqedinfo.cli", "run", "--config", str(cfg)], capture_output=True, text=True
    )
    assert proc.returncode == EXIT_OK
    assert proc.stdout.startswith("# experiment:")
