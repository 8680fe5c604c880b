import csv
import json
import subprocess
import sys

import pytest

from magstar.cli import RunConfig, load_config, main

SMALL = {"ns": 12, "nmu": 6, "radial_grid": 1000, "eval_n": 8,
         "sweep_omega2": [0.0, 0.02], "sweep_epsilon": [0.0, 0.05]}


def write_config(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(dict(SMALL, **kw)))
    return str(path)


def sidecar_hash(path):
    return json.loads(path.with_suffix(".json").read_text())["config_hash"]


def test_config_hash_ignores_output_location_and_workers():
    a = RunConfig.from_dict(dict(SMALL, out="x", workers=1))
    b = RunConfig.from_dict(dict(SMALL, out="y", workers=4))
    c = RunConfig.from_dict(dict(SMALL, omega2=0.01))
    assert a.config_hash == b.config_hash != c.config_hash


@pytest.mark.parametrize("bad", [{"gamma": 1.1}, {"omega2": 0.2}, {"epsilon": 0.5}, {"ns": 0},
                                 {"bogus": 1}, {"sweep_omega2": [0.01]}, {"newton_tol": -1}])
def test_config_errors_exit_2(tmp_path, bad, capsys):
    cfg = write_config(tmp_path, **bad)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_unreadable_config_exits_2(tmp_path):
    assert main(["radial", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["radial", "--config", str(bad)]) == 2


def test_flag_overrides(tmp_path):
    cfg = load_config(write_config(tmp_path, omega2=0.01), {"epsilon": 0.02, "omega2": None})
    assert cfg.omega2 == 0.01 and cfg.epsilon == 0.02


def test_radial_outputs(tmp_path):
    out = tmp_path / "r"
    assert main(["radial", "--config", write_config(tmp_path), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "radial_profile.csv")))
    assert rows[0] == ["s", "rho0", "h0", "U0"]
    meta = json.loads((out / "radial_profile.json").read_text())
    assert meta["config_hash"] == RunConfig.from_dict(SMALL).config_hash


def test_solve_outputs_and_determinism(tmp_path):
    cfg = write_config(tmp_path)
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["solve", "--config", cfg, "--out", str(o), "--omega2", "0.02", "--eps", "0.05"]) == 0
    h = RunConfig.from_dict(dict(SMALL, omega2=0.02, epsilon=0.05)).config_hash
    for name in ("fields.csv", "trace.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        assert sidecar_hash(outs[0] / name) == h
    for name in ("solution.json", "diagnostics.json", "zeta_coefficients.json", "phi_coefficients.json"):
        assert json.loads((outs[0] / name).read_text())["config_hash"] == h
    diag = json.loads((outs[0] / "diagnostics.json").read_text())
    assert diag["all_pass"]
    zeta = json.loads((outs[0] / "zeta_coefficients.json").read_text())
    assert zeta["l_modes"][:3] == [0, 2, 4]
    assert len(zeta["coefficients"]) == 12 * 6


def test_nonconvergence_exits_4(tmp_path):
    cfg = write_config(tmp_path, max_iter=1, newton_tol=1e-14)
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out), "--omega2", "0.03", "--eps", "0.05"]) == 4
    assert (out / "trace.csv").exists()


def test_sweep_outputs_independent_of_workers(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", cfg, "--out", str(a), "--workers", "1"]) == 0
    assert main(["sweep", "--config", cfg, "--out", str(b), "--workers", "3"]) == 0
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
    assert (a / "point_01_01" / "trace.csv").read_bytes() == (b / "point_01_01" / "trace.csv").read_bytes()
    rows = list(csv.DictReader(open(a / "summary.csv")))
    assert len(rows) == 4 and all(r["converged"] == "1" for r in rows)
    masses = [float(r["mass"]) for r in rows]
    assert max(masses) - min(masses) < 1e-9 * masses[0]
    assert sidecar_hash(a / "summary.csv") == sidecar_hash(b / "summary.csv")


def test_verify_subset_passes_and_strict_scale_fails(tmp_path):
    cfg = write_config(tmp_path, verify_criteria=[1, 2])
    out = tmp_path / "v"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "verify_report.json").read_text())
    assert [c["number"] for c in report["criteria"]] == [1, 2]
    strict = write_config(tmp_path, verify_criteria=[1, 2], verify_tolerance_scale=1e-6)
    assert main(["verify", "--config", strict, "--out", str(out)]) == 5


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "magstar", "radial", "--config", write_config(tmp_path),
                           "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "radial_profile.csv").exists()
