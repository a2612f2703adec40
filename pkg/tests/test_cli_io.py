import csv
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srbflow import map_model as mm
from srbflow.cli_io import main
from srbflow.config import parse_config
from srbflow.errors import ConfigError

DOUBLING = {"map": {"dim": 1, "A": [[2]], "modes": []}}
EPS01 = {"map": {"dim": 1, "A": [[2]], "modes": [{"i": 1, "m": [1], "sin": 0.1}]}}
EPS02 = {"map": {"dim": 1, "A": [[2]], "modes": [{"i": 1, "m": [1], "sin": 0.2}]}}


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)
    return write


def test_defaults_are_filled():
    cfg = parse_config(json.dumps(DOUBLING))
    assert cfg.map == mm.ExpandingMap.create([[2]])
    n = cfg.numerics
    assert (n.grid_size, n.tol, n.fd_step, n.cutoff, n.margin) == (256, 1e-12, 1e-3, 8, 0.05)
    assert cfg.k == 4 and cfg.seed == 0
    cfg2 = parse_config({"map": {"dim": 2, "A": [[2, 0], [0, 2]]}})
    assert cfg2.numerics.grid_size == 64 and cfg2.k == 5


def test_missing_map():
    with pytest.raises(ConfigError, match="^map: required$"):
        parse_config("{}")


def test_grid_size_must_be_power_of_two():
    with pytest.raises(ConfigError, match="grid_size: must be a power of two"):
        parse_config('{"numerics":{"grid_size":100}}')


@pytest.mark.parametrize("doc, message", [
    ({**DOUBLING, "colour": 1}, "colour: unknown key"),
    ({**DOUBLING, "numerics": {"tol": "small"}}, "numerics.tol: must be a finite number"),
    ({**DOUBLING, "numerics": {"grid_size": 64, "cutoff": 9}}, "numerics.cutoff: must be at most grid_size/8 = 8"),
    ({**DOUBLING, "flow": {"dt_min": 1.0, "dt_max": 0.5}}, "flow.dt_max: must not be smaller than flow.dt_min"),
    ({"map": {"dim": 1, "A": [[1]]}}, "map.A: eigenvalues must lie outside the unit circle"),
    ({"map": {"dim": 1, "A": [[2]], "modes": [{"i": 2, "m": [1]}]}}, "map.modes[0].i"),
    ("not json", "invalid JSON"),
])
def test_config_errors(doc, message):
    with pytest.raises(ConfigError) as info:
        parse_config(doc if isinstance(doc, str) else json.dumps(doc))
    assert message in str(info.value)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(0, 6), cutoff=st.integers(1, 32),
       sin=st.floats(-0.1, 0.1, allow_nan=False))
def test_config_round_trip(seed, k, cutoff, sin):
    doc = {"map": {"dim": 1, "A": [[2]], "modes": [{"i": 1, "m": [1], "sin": sin}]},
           "metric": {"k": k}, "numerics": {"cutoff": cutoff}, "seed": seed}
    cfg = parse_config(json.dumps(doc))
    assert parse_config(json.dumps(cfg.to_json())) == cfg


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_entropy_prints_log2(write_config, tmp_path, capsys):
    code, out, _ = run_cli(capsys, "entropy", "--config", write_config(DOUBLING), "--out", str(tmp_path / "o"))
    assert code == 0
    assert "0.693147" in out
    doc = json.loads((tmp_path / "o" / "entropy.json").read_text())
    assert abs(doc["entropy"] - math.log(2)) < 1e-12 and doc["seed"] == 0


def test_verify_json_on_defaults(write_config, tmp_path, capsys):
    code, out, _ = run_cli(capsys, "verify", "--json", "--config", write_config(DOUBLING), "--out", str(tmp_path))
    assert code == 0
    doc = json.loads(out)
    assert doc["passed"] and doc["seed"] == 0
    names = {s["name"] for s in doc["suites"]}
    assert {"duality", "density", "linear_response", "entropy_derivative", "gradient_riesz",
            "second_order_bound", "lipschitz", "projection_invariants"} <= names
    assert all("max_residual" in s for s in doc["suites"])


def test_density_csv_format(write_config, tmp_path, capsys):
    code, _, _ = run_cli(capsys, "density", "--config", write_config(EPS01), "--out", str(tmp_path))
    assert code == 0
    raw = (tmp_path / "density.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n") and b"," in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["x", "rho"] and len(rows) == 257
    vals = np.array([[float(v) for v in r] for r in rows[1:]])
    summary = json.loads((tmp_path / "density.json").read_text())
    assert summary["integral"] == pytest.approx(vals[:, 1].mean(), abs=1e-14)
    assert {"min", "max", "integral", "iterations"} <= set(summary)


def test_outputs_are_deterministic(write_config, tmp_path, capsys):
    cfg = write_config({**EPS01, "seed": 11})
    for d in ("a", "b"):
        assert run_cli(capsys, "gradient", "--config", cfg, "--out", str(tmp_path / d))[0] == 0
        assert run_cli(capsys, "flow", "--config", cfg, "--out", str(tmp_path / d))[0] == 0
    for name in ("gradient.json", "flow.csv", "flow.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "a" / "gradient.json").read_text())["seed"] == 11


def test_flow_from_eps02(write_config, tmp_path, capsys):
    """The documented regression run: x -> 2x + 0.2 sin(2 pi x) flowed to the doubling map."""
    code, _, err = run_cli(capsys, "flow", "--config", write_config(EPS02), "--out", str(tmp_path))
    assert code == 0, err
    ent = np.loadtxt(tmp_path / "flow.csv", delimiter=",", skiprows=1, usecols=1, ndmin=1)
    assert np.all(np.diff(ent) >= 0)
    assert abs(ent[-1] - math.log(2)) < 1e-3


def test_failed_flow_writes_failed_outputs(write_config, tmp_path, capsys):
    code, _, err = run_cli(capsys, "flow", "--config", write_config(EPS02), "--out", str(tmp_path))
    assert code == 1
    assert err.count("\n") == 1 and "ExpansionLost" in err
    assert (tmp_path / "flow.csv.failed").exists() and (tmp_path / "flow.json.failed").exists()
    assert not (tmp_path / "flow.csv").exists()
    assert (tmp_path / "flow.csv.failed").read_text().splitlines()[0] == \
        "t,entropy,grad_norm,mu_min,eta_hat,dt,accepted"


def test_flow_from_eps01(write_config, tmp_path, capsys):
    code, _, _ = run_cli(capsys, "flow", "--config", write_config(EPS01), "--out", str(tmp_path))
    assert code == 0
    with open(tmp_path / "flow.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "entropy", "grad_norm", "mu_min", "eta_hat", "dt", "accepted"]
    ent = np.array([float(r[1]) for r in rows[1:]])
    assert np.all(np.diff(ent) >= 0) and abs(ent[-1] - math.log(2)) < 1e-3
    summary = json.loads((tmp_path / "flow.json").read_text())
    assert summary["status"] == "Converged" and summary["final_map"]["A"] == [[2]]


def test_backward_flow(write_config, tmp_path, capsys):
    cfg = write_config({"map": {"dim": 1, "A": [[2]], "modes": [{"i": 1, "m": [1], "sin": 0.05}]},
                        "flow": {"max_steps": 4}})
    code, out, _ = run_cli(capsys, "flow", "--backward", "--json", "--config", cfg, "--out", str(tmp_path))
    assert code == 0
    doc = json.loads(out)
    assert doc["direction"] == "backward" and doc["final_entropy"] < math.log(2)


def test_gradient_with_checks(write_config, tmp_path, capsys):
    code, out, _ = run_cli(capsys, "gradient", "--check-response", "--fd", "--json",
                           "--config", write_config(EPS01), "--out", str(tmp_path))
    assert code == 0
    doc = json.loads(out)
    assert doc["l2_pairing_check"] < 1e-9 and doc["tail_bound"] < 1e-9
    assert 1.7 <= doc["response_check"]["order"] <= 2.3
    assert abs(doc["fd"]["pairing"] - doc["fd"]["derivative"]) < 1e-9
    g = mm.VecField.from_json(1, doc["modes"])
    assert g.as_dict()[(0, (1,))][1] < 0


def test_config_error_exit_code(write_config, tmp_path, capsys):
    code, _, err = run_cli(capsys, "density", "--config", write_config({"numerics": {"grid_size": 100}}))
    assert code == 2
    assert "map: required" in err and "grid_size: must be a power of two" in err
    code, _, err = run_cli(capsys, "density", "--config", str(tmp_path / "missing.json"))
    assert code == 2


def test_output_dir_precedence(write_config, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config({**DOUBLING, "output": {"dir": str(tmp_path / "from_config")}})
    assert run_cli(capsys, "entropy", "--config", cfg)[0] == 0
    assert (tmp_path / "from_config" / "entropy.json").exists()
    assert run_cli(capsys, "entropy", "--config", cfg, "--out", str(tmp_path / "explicit"))[0] == 0
    assert (tmp_path / "explicit" / "entropy.json").exists()
    assert run_cli(capsys, "entropy", "--config", write_config(DOUBLING, "plain.json"))[0] == 0
    assert (tmp_path / "out" / "entropy.json").exists()


def test_thread_budget_variable(write_config, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SRBFLOW_THREADS", "-3")
    assert run_cli(capsys, "entropy", "--config", write_config(DOUBLING), "--out", str(tmp_path))[0] == 2
    monkeypatch.setenv("SRBFLOW_THREADS", "1")
    assert run_cli(capsys, "entropy", "--config", write_config(DOUBLING), "--out", str(tmp_path))[0] == 0


def test_spectral_lab_needs_no_config(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "spectral-lab", "--out", str(tmp_path))
    assert code == 0
    assert "PASS" in out and "FAIL" not in out
    assert json.loads((tmp_path / "spectral_lab.json").read_text())["seed"] == 0


def test_console_script_and_missing_config(tmp_path):
    exe = [sys.executable, "-m", "srbflow"]
    proc = subprocess.run(exe + ["entropy"], capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode != 0 and "--config" in proc.stderr
    cfg = tmp_path / "d.json"
    cfg.write_text(json.dumps(DOUBLING))
    env = {**os.environ, "SRBFLOW_THREADS": "2"}
    proc = subprocess.run(exe + ["entropy", "--config", str(cfg)], capture_output=True, text=True,
                          cwd=tmp_path, env=env)
    assert proc.returncode == 0 and proc.stdout.startswith("entropy 0.693147")
