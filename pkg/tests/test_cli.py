import json

import numpy as np
import pytest

from sqtomo import cli
from sqtomo.noisekit import ShotRecord


def run(*args):
    return cli.main([str(a) for a in args])


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [list(map(float, l.split(","))) for l in lines[1:]]


def test_bound_table(tmp_path):
    assert run("bound", "--out", tmp_path) == 0
    header, rows = read_csv(tmp_path / "bound.csv")
    assert header == ["r", "c_nh", "mse_sic"]
    ref = [8.932, 8.810, 8.370, 8.038, 7.083, 6.385]
    assert np.allclose([r[1] for r in rows], ref, atol=5e-4)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["outputs"][0]["path"] == "bound.csv"
    assert len(manifest["config_sha256"]) == 64


def test_floats_have_17_digits(tmp_path):
    run("bound", "--r", "0.1", "--out", tmp_path)
    value = (tmp_path / "bound.csv").read_text().splitlines()[1].split(",")[1]
    assert float(value) == pytest.approx((2 + np.sqrt(0.99)) ** 2, abs=0)


def test_povm_report(tmp_path):
    assert run("povm", "--r-p", 0, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "povm_report.json").read_text())["sic_equivalent"] is True
    assert run("povm", "--r-p", 0.8, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "povm_report.json").read_text())
    assert rep["sic_equivalent"] is False
    assert np.allclose(rep["traces"], [0.25, 7 / 12, 7 / 12, 7 / 12])
    assert rep["completeness_residual"] < 1e-12


def test_pure_state_degeneracy_exit(tmp_path, capsys):
    assert run("povm", "--r-p", 1.0, "--out", tmp_path) == 2
    assert "pure-state degeneracy" in capsys.readouterr().err


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "r_p": 0.2, "typo": 3}))
    assert run("povm", "--config", bad, "--out", tmp_path) == 2
    bad.write_text(json.dumps({"r_p": 0.2}))
    assert run("povm", "--config", bad, "--out", tmp_path) == 2
    bad.write_text(json.dumps({"schema_version": 99}))
    assert run("povm", "--config", bad, "--out", tmp_path) == 2
    bad.write_text("{not json")
    assert run("povm", "--config", bad, "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("povm", "--r-p", "abc")
    assert exc.value.code == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "r_p": 0.8, "phi": 0.3}))
    assert run("povm", "--config", cfg, "--r-p", 0.5, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "povm_report.json").read_text())
    assert rep["params"]["r_p"] == 0.5 and rep["params"]["phi"] == 0.3


def test_dilate_from_povm_file(tmp_path):
    run("povm", "--r-p", 0.8, "--out", tmp_path)
    assert run("dilate", "--povm", tmp_path / "povm.json", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "dilate_report.json").read_text())
    assert rep["max_error"] < 1e-12 and rep["n_states"] == 100
    u = np.array(json.loads((tmp_path / "unitary.json").read_text())["unitary"])
    u = u[..., 0] + 1j * u[..., 1]
    assert np.abs(u.conj().T @ u - np.eye(4)).max() < 1e-12


def test_invariant_failure_exit(tmp_path, monkeypatch):
    monkeypatch.setattr(cli.naimark, "verify_dilation", lambda *a, **k: 0.5)
    assert run("dilate", "--r-p", 0.3, "--out", tmp_path) == 3


def test_simulate_noiseless_near_bound(tmp_path):
    assert run("simulate", "--r", 0.5, "--n-shots", 10**6, "--instances", 10_000,
               "--bootstrap", 300, "--out", tmp_path) == 0
    header, rows = read_csv(tmp_path / "mse.csv")
    row = dict(zip(header, rows[0]))
    assert abs(row["scaled_mse"] - row["c_nh"]) < 3 * row["std_err"]
    assert abs(row["c_nh"] - 8.2141) < 1e-4


def test_simulate_then_fit(tmp_path):
    assert run("simulate", "--r", 0.25, "--n-shots", 400_000, "--instances", 1000,
               "--bootstrap", 100, "--record-format", "csv", "--noise", 0.03, "--mitigate",
               "--out", tmp_path) == 0
    rec = ShotRecord.load(tmp_path / "shots_0.csv")
    assert rec.noise.p01_q0 == 0.03
    assert run("fit", tmp_path / "shots_0.csv", "--group-sizes", "10,100,1000", "--instances",
               2000, "--bootstrap", 100, "--mitigate", "--out", tmp_path) == 0
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert set(fit) == {"record", "c", "delta", "c_err", "delta_err"}
    header, rows = read_csv(tmp_path / "curve.csv")
    assert header == ["record", "n", "scaled_mse", "std_err"] and len(rows) == 3


def test_fit_missing_record(tmp_path):
    assert run("fit", tmp_path / "nope.csv", "--out", tmp_path) == 2
    assert run("fit", "--out", tmp_path) == 2  # no records at all


def test_adaptive_scan_unique_minimum(tmp_path):
    assert run("adaptive", "--scan", "--scan-points", 25, "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "adaptive.json").read_text())
    assert summary["unique_minimum"]
    assert abs(summary["optimal_n_sic"] - 673) < 0.15 * 673


def test_adaptive_mc_single(tmp_path):
    assert run("adaptive", "--mode", "mc", "--n-sic", 673, "--runs", 3000, "--out", tmp_path) == 0
    header, rows = read_csv(tmp_path / "adaptive.csv")
    assert header == ["n_sic", "scaled_mse", "std_err", "converged"]
    assert rows[0][0] == 673


def test_bayes_sharp_prior(tmp_path):
    assert run("bayes", "--kappa", 1e4, "--alpha", 1e4, "--rp-grid", "0:0.95:96", "--out", tmp_path) == 0
    res = json.loads((tmp_path / "bayes.json").read_text())
    assert abs(res["argmin_rp"] - 0.5) < 0.02
    header, rows = read_csv(tmp_path / "risk.csv")
    assert header == ["r_p", "risk"] and len(rows) == 96


@pytest.mark.parametrize("argv", [
    ["bound"],
    ["povm", "--r-p", "0.37", "--phi", "0.2"],
    ["dilate", "--r-p", "0.6", "--seed", "4"],
    ["simulate", "--r", "0.5", "--n-shots", "50000", "--instances", "500", "--bootstrap", "50",
     "--noise", "0.02", "--mitigate"],
    ["adaptive", "--mode", "mc", "--n-sic", "200", "--n-total", "2000", "--runs", "500", "--seed", "3"],
    ["bayes", "--kappa", "5", "--alpha", "5", "--rp-grid", "0:0.9:10"],
])
def test_byte_identical_reruns(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(*argv, "--out", a) == 0
    assert run(*argv, "--out", b) == 0
    files = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
    assert files and files == sorted(p.name for p in b.iterdir() if p.name != "manifest.json")
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    for key in ("config_sha256", "outputs", "config", "seed"):
        assert ma[key] == mb[key]
