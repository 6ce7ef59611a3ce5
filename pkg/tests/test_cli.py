import json
import subprocess
import sys

import numpy as np
import pytest

from vsm import io
from vsm.cli import load_config, main
from vsm.errors import ConfigError
from vsm.market import MarketPanel, write_panel_csv

SMALL = ["--set", "model.n_particles=20", "--set", "model.n_steps=30"]


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_particles_manifest_roundtrip(tmp_path):
    code, a = _run(tmp_path, "a", "particles", *SMALL, "--seed", "4")
    assert code == 0
    man = json.loads((a / "manifest.json").read_text())
    assert man["mode"] == "particles" and man["seed"] == 4
    assert set(man["outputs"]) >= {"ensemble.csv", "ensemble.bin", "w0.csv", "total_mean.csv", "statistics.csv"}
    code, b = _run(tmp_path, "b", "particles", "--config", str(a / "manifest.json"))
    assert code == 0
    for f in man["outputs"]:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    states = io.read_binary(a / "ensemble.bin")
    assert states.shape == (1, 20, 31)
    cols = io.read_columns(a / "ensemble.csv")
    np.testing.assert_array_equal(cols["value"], states.transpose(0, 2, 1).ravel())


def test_replications_independent_of_workers(tmp_path):
    args = ["particles", *SMALL, "--set", "particles.replications=3", "--set", "particles.binary=false"]
    _, a = _run(tmp_path, "a", *args, "--workers", "1")
    _, b = _run(tmp_path, "b", *args, "--workers", "3")
    assert (a / "ensemble.csv").read_bytes() == (b / "ensemble.csv").read_bytes()
    assert not (a / "ensemble.bin").exists()


def test_missing_panel_names_path(tmp_path, capsys):
    code, _ = _run(tmp_path, "m", "market", "--panel", str(tmp_path / "absent.csv"))
    assert code != 0
    assert "absent.csv" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    assert _run(tmp_path, "x", "particles", "--set", "model.alpah=2")[0] == 2
    assert "model.alpah" in capsys.readouterr().err
    assert _run(tmp_path, "x", "particles", "--set", 'model.alpha="two"')[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(tmp_path, "x", "particles", "--config", str(bad))[0] == 2
    assert "invalid JSON" in capsys.readouterr().err
    assert _run(tmp_path, "x", "particles", "--set", "model.beta=0.1")[0] == 2
    with pytest.raises(ConfigError):
        load_config(overrides=[{"model": 3}])


def test_manifest_mode_mismatch(tmp_path):
    _, a = _run(tmp_path, "a", "particles", *SMALL)
    with pytest.raises(ConfigError, match="mode"):
        load_config(a / "manifest.json", mode="spde")


def test_market_and_calibrate(tmp_path):
    rng = np.random.default_rng(0)
    caps = np.cumprod(rng.lognormal(0, 0.02, size=(15, 12)), axis=0)
    dates = [str(np.datetime64("2021-03-01") + i) for i in range(15)]
    path = tmp_path / "panel.csv"
    write_panel_csv(MarketPanel(dates, caps, [f"S{i}" for i in range(12)]), path)
    code, m = _run(tmp_path, "m", "market", "--panel", str(path))
    assert code == 0
    assert io.read_columns(m / "curve_avg.csv")["log_rank"].size == 12
    code, c = _run(tmp_path, "c", "calibrate", "--panel", str(path), "--set", "calibrate.replications=2",
                   "--set", "calibrate.alpha_grid=[1,4]", "--set", "calibrate.beta_grid=[1]")
    assert code == 0
    man = json.loads((c / "manifest.json").read_text())
    assert man["results"]["best_alpha"] == 1.0
    assert man["results"]["skipped"] == [[4.0, 1.0]]


@pytest.mark.parametrize("mode", ["mkv", "mkv-nocn", "spde", "pde"])
def test_other_modes_write_outputs(tmp_path, mode):
    extra = ["--set", "mkv.n_samples=500", "--set", "spde.n_nodes=200", "--set", "spde.save_every=10"]
    code, out = _run(tmp_path, mode, mode, *SMALL, *extra)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    for f in man["outputs"]:
        assert (out / f).stat().st_size > 0
    if mode in ("spde", "pde"):
        assert man["results"]["max_mass_drift"] < 1e-3


def test_verify_selected_check(tmp_path):
    code, out = _run(tmp_path, "v", "verify", "--set", 'verify.checks=["alpha_zero_order"]')
    assert code == 0
    lines = (out / "reports.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["passed"]


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "vsm.cli", "particles", *SMALL, "--out", str(tmp_path / "e")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "vsm.cli", "nonsense"], capture_output=True, text=True)
    assert r.returncode == 2
