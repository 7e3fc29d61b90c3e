import csv
import io
import json
import math

import pytest

from jumpcalc import bounds as bc
from jumpcalc.cli import RunManifest, config_hash, main
from jumpcalc.pathio import read_manifest, read_path_csv
from jumpcalc.report import McReport


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def bounds_json(capsys, *args):
    assert main(["bounds", "--format", "json", *args]) == 0
    return {k: float(v) for k, v in json.loads(capsys.readouterr().out).items()}


# bounds

def test_bounds_kappa_zero_c(capsys):
    out = bounds_json(capsys, "--kappa", "gamma=1", "a=1", "c=0")
    assert out["log_kappa"] == pytest.approx(2.0, rel=1e-12)


def test_bounds_functions(capsys):
    out = bounds_json(capsys, "--gamma", "x=1", "--gamma-inv", "y=1", "--psi", f"y={math.log(2)}")
    assert out["Gamma"] == pytest.approx(math.e / 2, rel=1e-15)
    assert out["gamma_inv"] == pytest.approx(bc.gamma_inv(1.0), rel=1e-15)
    # Gamma(log 2) = log 2, so psi is 1 there
    assert out["psi"] == pytest.approx(1.0, abs=1e-12)


def test_bounds_psi_text_rounding(capsys):
    assert main(["bounds", "--psi", "y=0.6931"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("psi")
    assert f"{float(line.split()[-1]):.3f}" == "1.000"


def test_bounds_lemma_matches_library(capsys):
    out = bounds_json(capsys, "--lemma", "drift_barrier", "x=1", "c=0.05", "mu=0.1", "C_mu=0.1", "sigma2=0.01")
    lib = bc.drift_barrier_bound(bc.DriftBarrier(1, 0.05, 0.1, 0.1, 0.01))
    assert out["bound"] == lib.bound.value
    assert out["log_kappa"] == lib.log_kappa


@pytest.mark.parametrize("args", [["--kappa", "gamma=1"], ["--psi", "y=abc"], ["--lemma", "nope", "x=1"],
                                  ["--gamma", "x"], []])
def test_bounds_usage_errors(args):
    assert main(["bounds", *args]) == 2


# simulate

def test_simulate_poisson(tmp_path):
    cfg = {"model": {"name": "poisson_counter", "rate": 1.0}, "sim": {"T": 10.0, "seed": 3, "dt_grid": 1.0}}
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    tab = read_path_csv((out / "path.csv").read_text())
    n_events = int((tab.event_flag == 2).sum())
    assert n_events == tab.x[-1, 0]
    m = read_manifest((out / "path.manifest").read_bytes())
    assert m.seed == 3
    rm = RunManifest.from_json((out / "run_manifest.json").read_text())
    assert rm.config_hash == config_hash(cfg) and rm.command == "simulate"
    assert str(out / "path.csv") in rm.outputs


def test_simulate_event_count_law(tmp_path):
    # average of 40 Poisson(10) counts across seeds
    counts = []
    for s in range(40):
        cfg = {"model": {"name": "poisson_counter", "rate": 1.0}, "sim": {"T": 10.0, "dt_grid": 5.0}}
        out = tmp_path / f"o{s}"
        assert main(["simulate", "--config", write_cfg(tmp_path, cfg), "--seed", str(s), "--out", str(out)]) == 0
        counts.append((read_path_csv((out / "path.csv").read_text()).event_flag == 2).sum())
    assert abs(sum(counts) / 40 - 10) < 4 * math.sqrt(10 / 40)


def test_simulate_linear_flow_has_no_events(tmp_path):
    cfg = {"model": {"name": "linear_flow", "slope": -1.0, "intercept": 0.5}, "sim": {"T": 2.0, "x0": 1.0}}
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    tab = read_path_csv((out / "path.csv").read_text())
    assert not (tab.event_flag > 0).any()
    # x' = 0.5 - x from 1
    assert tab.x[-1, 0] == pytest.approx(0.5 + 0.5 * math.exp(-2), rel=1e-10)


@pytest.mark.parametrize("cfg", [
    {"model": {"name": "poisson_counter", "rate": -1.0}, "sim": {"T": 1.0}},
    {"model": {"name": "poisson_counter", "rate": 1.0}, "sim": {"T": 1.0, "bogus": 1}},
    {"model": {"name": "poisson_counter", "rate": 1.0}},
    {"model": {"name": "birth_death", "b": 1.0}, "sim": {"T": 1.0}},
])
def test_simulate_bad_config_writes_nothing(tmp_path, cfg, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "jumpcalc:" in capsys.readouterr().err


def test_unreadable_config(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == 2


# verify

SP_CFG = {"model": {"name": "poisson_counter", "rate": 1.0}, "sim": {"T": 5.0, "n_paths": 2000, "seed": 1},
          "query": {"kind": "sample_path", "lams": [1.0], "a_vals": [2.0, 4.0]}}


def test_verify_pass_and_report_round_trip(tmp_path):
    out = tmp_path / "out"
    assert main(["verify", "--config", write_cfg(tmp_path, SP_CFG), "--out", str(out), "--format", "json"]) == 0
    reps = [McReport.from_json(json.dumps(d)) for d in json.loads((out / "report.json").read_text())]
    assert len(reps[0].results) == 4 and reps[0].passed
    rm = RunManifest.from_json((out / "run_manifest.json").read_text())
    assert rm.seed == 1 and rm.command == "verify"


def test_verify_csv_report(tmp_path):
    out = tmp_path / "out"
    assert main(["verify", "--config", write_cfg(tmp_path, SP_CFG), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO((out / "report.csv").read_text())))
    assert len(rows) == 4 and all(r["verdict"] == "respected" for r in rows)


def test_verify_engineered_failure_exits_one(tmp_path, capsys):
    cfg = json.loads(json.dumps(SP_CFG))
    cfg["query"]["negate_a"] = True
    assert main(["verify", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1
    assert "FAILED" in capsys.readouterr().out


def test_verify_empty_grid_is_usage_error(tmp_path):
    cfg = json.loads(json.dumps(SP_CFG))
    cfg["query"]["lams"] = []
    assert main(["verify", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_verify_threads_and_env_are_deterministic(tmp_path, monkeypatch):
    path = write_cfg(tmp_path, SP_CFG)
    assert main(["verify", "--config", path, "--out", str(tmp_path / "a"), "--format", "json"]) == 0
    monkeypatch.setenv("JUMPCALC_THREADS", "3")
    assert main(["verify", "--config", path, "--out", str(tmp_path / "b"), "--format", "json"]) == 0
    ra = [McReport.from_json(json.dumps(d)) for d in json.loads((tmp_path / "a" / "report.json").read_text())]
    rb = [McReport.from_json(json.dumps(d)) for d in json.loads((tmp_path / "b" / "report.json").read_text())]
    assert ra[0].fingerprint() == rb[0].fingerprint()
    monkeypatch.setenv("JUMPCALC_THREADS", "zero")
    assert main(["verify", "--config", path, "--out", str(tmp_path / "c")]) == 2


def test_verify_seed_override(tmp_path):
    path = write_cfg(tmp_path, SP_CFG)
    main(["verify", "--config", path, "--out", str(tmp_path / "a"), "--format", "json", "--seed", "77"])
    rm = RunManifest.from_json((tmp_path / "a" / "run_manifest.json").read_text())
    assert rm.seed == 77


def test_verify_lemma_query(tmp_path):
    cfg = {"model": {"name": "birth_death", "b": 3.0, "d": 1.0, "step": 0.1},
           "sim": {"T": 1.0, "n_paths": 500, "x0": 0.0},
           "query": {"kind": "lemma", "lemma": "drift_escape",
                     "params": {"x": 1, "mu": 0.2, "sigma2": 0.04, "b": 1, "eps": 0.5, "c_delta": 0.1}}}
    assert main(["verify", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0


# sweep

def test_sweep_single_point_matches_bounds(tmp_path, capsys):
    q = {"kind": "sweep", "alpha": 2.0, "C": 1.0, "item": "drift_barrier",
         "params": {"x": 1.0, "mu": 0.1}, "c_grid": [0.01]}
    out = tmp_path / "out"
    assert main(["sweep", "--config", write_cfg(tmp_path, {"query": q}), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
    assert len(rows) == 1
    row = bc.scaling_sweep(2.0, 1.0, "drift_barrier", {"x": 1.0, "mu": 0.1}, [0.01])[0]
    assert float(rows[0]["log_kappa_lower"]) == row.log_kappa_lower
    assert float(rows[0]["scaled"]) == row.scaled
    assert capsys.readouterr().out.startswith("alpha,item,c_delta")


def test_sweep_missing_param(tmp_path):
    q = {"kind": "sweep", "alpha": 2.0, "C": 1.0, "item": "drift_barrier", "params": {}, "c_grid": [0.01]}
    assert main(["sweep", "--config", write_cfg(tmp_path, {"query": q}), "--out", str(tmp_path / "o")]) == 2


def test_shipped_configs_are_valid():
    from pathlib import Path

    from jumpcalc.cli import validate_config
    files = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
    assert files
    for f in files:
        validate_config(json.loads(f.read_text()))
