import json
import subprocess
import sys
from pathlib import Path

import pytest

from adcs_sim import __version__
from adcs_sim.cli import EXIT_ERROR, EXIT_OK, EXIT_REQUIREMENT_FAILED, main

TLE_TEXT = """BRITE 40020
1 40020U 14033AK  24080.50000000  .00000120  00000-0  15000-4 0  9999
2 40020  97.7300 145.0000 0085944  90.0000 270.0000 14.66693828 50000
"""


def config(tmp_path, **kw):
    data = {"name": "cli", "targets": ["Alpha Circini"], "sensors": {"star_startup_s": 0},
            "initial": {"mode": "slew", "q": [0, 0, 0, 1], "w_deg_s": [0, 0, 0]}}
    data.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def test_tle_parse(tmp_path, capsys):
    f = tmp_path / "brite.tle"
    f.write_text(TLE_TEXT)
    assert main(["tle", "parse", str(f)]) == EXIT_OK
    record = json.loads(capsys.readouterr().out)
    assert record["catalog_number"] == 40020
    assert record["period_min"] == pytest.approx(98.18, rel=5e-3)


def test_tle_parse_bad_checksum(tmp_path, capsys):
    f = tmp_path / "bad.tle"
    f.write_text(TLE_TEXT.replace("9999", "9990"))
    assert main(["tle", "parse", str(f)]) == EXIT_ERROR
    assert "error" in capsys.readouterr().err


def test_run_requirement_failure_then_report(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config(tmp_path, duration_s=20.0)), "--out", str(out)]) \
        == EXIT_REQUIREMENT_FAILED
    assert (out / "timeseries.csv").exists()
    capsys.readouterr()
    assert main(["report", str(out)]) == EXIT_REQUIREMENT_FAILED
    req = json.loads(capsys.readouterr().out)
    assert req["imaging_15min"] == "fail"


def test_run_passing_scenario(tmp_path):
    out = tmp_path / "out"
    cfg = config(tmp_path, duration_s=300.0, track_duration_s=20.0)
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["tracks"][0]["completed"]


def test_run_overrides(tmp_path):
    out = tmp_path / "out"
    cfg = config(tmp_path, duration_s=1000.0)
    main(["run", "--config", str(cfg), "--out", str(out), "--seed", "3", "--duration", "5"])
    params = json.loads((out / "timeseries.csv").read_text().splitlines()[1][len("# params "):])
    assert params["seed"] == 3
    assert len((out / "timeseries.csv").read_text().splitlines()) == 3 + 50


def test_config_errors_exit_1(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR
    bad = config(tmp_path, steps={"pointing_dt": 0.3})
    assert main(["run", "--config", str(bad)]) == EXIT_ERROR
    assert "config.steps.pointing_dt" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "nothing")]) == EXIT_ERROR


def test_stars(capsys):
    assert main(["stars", "--fov", "90", "--samples", "2000"]) == EXIT_OK
    assert "P(>= 4 in view)" in capsys.readouterr().out


def test_version_and_module_entry():
    res = subprocess.run([sys.executable, "-m", "adcs_sim.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
    res = subprocess.run([sys.executable, "-m", "adcs_sim.cli"], capture_output=True, text=True)
    assert res.returncode == EXIT_ERROR
