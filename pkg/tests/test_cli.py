import csv
import json

import numpy as np

from chb6.cli import main
from chb6.io import read_field

BASE = {
    "grid": {"dim": 2, "sizes": [16, 16]},
    "time": {"T": 0.02, "n_steps": 10},
    "initial": {"type": "mode", "mode": [1, 1], "amplitude": 0.4},
}
TRACK = {
    **BASE,
    "control": {"M": 100.0, "beta": [1.0, 0.0, 0.0, 0.1], "kappa": 0.0},
    "targets": {"v_Q": {"type": "mode", "mode": [0, 1], "phase": "sin", "component": 0}},
    "optimize": {"tol_rel": 1e-6},
}


def _cfg(tmp_path, raw, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_pure_phase(tmp_path):
    raw = {**BASE, "initial": {"type": "constant", "value": 1.0}, "options": {"snapshot_every": 5}}
    out = tmp_path / "run"
    assert main(["simulate", "--config", _cfg(tmp_path, raw), "--out", str(out)]) == 0
    rows = _rows(out / "series.csv")
    assert list(rows[0]) == ["step", "t", "energy", "mean", "max_abs_phi", "v_norm", "mean_ode_residual"]
    assert len(rows) == 11
    assert all(float(r["energy"]) == 0.0 for r in rows)
    assert rows[-1]["v_norm"] == ""
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config"] == raw and "numpy" in meta["versions"] and meta["seed"] == 0
    grid, phi = read_field(out / "snapshots" / "phi_000010.json")
    assert np.all(phi == 1.0)
    assert "series.csv" in (out / "plots.gp").read_text()


def test_simulate_sigma_recursion(tmp_path):
    raw = {**BASE, "physics": {"sigma": 2.0}, "initial": {"type": "constant", "value": 0.5}}
    out = tmp_path / "run"
    assert main(["simulate", "--config", _cfg(tmp_path, raw), "--out", str(out)]) == 0
    means = np.array([float(r["mean"]) for r in _rows(out / "series.csv")])
    np.testing.assert_allclose(means, 0.5 * (1 - 2.0 * 0.002) ** np.arange(11), atol=1e-10)


def test_missing_key_exit_2(tmp_path, capsys):
    raw = {k: v for k, v in BASE.items() if k != "time"}
    assert main(["simulate", "--config", _cfg(tmp_path, raw), "--out", str(tmp_path / "r")]) == 2
    assert "time" in capsys.readouterr().err


def test_optimize_needs_control(tmp_path, capsys):
    assert main(["optimize", "--config", _cfg(tmp_path, BASE), "--out", str(tmp_path / "r")]) == 2
    assert "control" in capsys.readouterr().err


def test_solver_failure_exit_3(tmp_path):
    raw = {**BASE, "time": {"T": 1e6, "n_steps": 1}, "initial": {"type": "mode", "mode": [1, 0], "amplitude": 1e200}}
    with np.errstate(all="ignore"):
        code = main(["simulate", "--config", _cfg(tmp_path, raw), "--out", str(tmp_path / "r")])
    assert code == 3


def test_optimize_tracking(tmp_path):
    out = tmp_path / "opt"
    assert main(["optimize", "--config", _cfg(tmp_path, TRACK), "--out", str(out)]) == 0
    rows = _rows(out / "optimize.csv")
    assert list(rows[0])[:2] == ["iter", "cost_total"]
    costs = [float(r["cost_total"]) for r in rows]
    assert costs == sorted(costs, reverse=True)
    sr = json.loads((out / "sparsity.json").read_text())
    assert sr["projection_residual"] <= 1e-4 and sr["reason"] == "converged"
    index = json.loads((out / "control" / "index.json").read_text())
    assert len(index["files"]) == 10
    grid, g0 = read_field(out / index["files"][0]["file"])
    assert g0.shape == (2, 16, 16) and np.any(g0)


def test_optimize_tikhonov_only(tmp_path):
    raw = {**BASE, "control": {"beta": [0, 0, 0, 1]}}
    out = tmp_path / "opt"
    assert main(["optimize", "--config", _cfg(tmp_path, raw), "--out", str(out)]) == 0
    rows = _rows(out / "optimize.csv")
    assert len(rows) == 1 and float(rows[0]["residual"]) == 0.0


def test_sweep_kappa(tmp_path):
    raw = {**TRACK, "optimize": {"tol_rel": 1e-6, "kappa_sweep": [0.0, 0.01, 10.0]}}
    out = tmp_path / "sweep"
    assert main(["sweep-kappa", "--config", _cfg(tmp_path, raw), "--out", str(out)]) == 0
    table = _rows(out / "sparsity_table.csv")
    assert [float(r["kappa"]) for r in table] == [0.0, 0.01, 10.0]
    assert float(table[0]["sparsity_fraction"]) < 1.0 and float(table[-1]["sparsity_fraction"]) == 1.0
    assert table[-1]["criterion_pass"] == "True"
    assert all((out / f"kappa_{i:03d}" / "optimize.csv").exists() for i in range(3))


def test_sweep_needs_list(tmp_path):
    assert main(["sweep-kappa", "--config", _cfg(tmp_path, TRACK), "--out", str(tmp_path / "s")]) == 2


def test_determinism(tmp_path):
    cfg = _cfg(tmp_path, {**TRACK, "initial": {"type": "random", "amplitude": 0.3}})
    for name in ("a", "b"):
        assert main(["optimize", "--config", cfg, "--out", str(tmp_path / name), "--seed", "3", "--threads", "1"]) == 0
    assert (tmp_path / "a" / "optimize.csv").read_bytes() == (tmp_path / "b" / "optimize.csv").read_bytes()
    assert (tmp_path / "a" / "control" / "g_000004.bin").read_bytes() == (tmp_path / "b" / "control" / "g_000004.bin").read_bytes()


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("CHB6_OUT", str(tmp_path / "root"))
    assert main(["simulate", "--config", _cfg(tmp_path, BASE)]) == 0
    assert (tmp_path / "root" / "simulate" / "series.csv").exists()


def test_verify_only_and_mutation(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "--only", "taylor", "--out", str(out)]) == 0
    rows = _rows(out / "verify.csv")
    assert [r["check"] for r in rows] == ["taylor"] and rows[0]["pass"] == "True"
    assert json.loads((out / "verify.json").read_text())["passed"] is True
    assert main(["verify", "--only", "duality", "--mutate", "--out", str(tmp_path / "m")]) == 1
    assert main(["verify", "--only", "nonsense", "--out", str(tmp_path / "n")]) == 2
