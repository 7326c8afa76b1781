import json
import os

import numpy as np
import pytest

from amcert.config import config_from_dict
from amcert.runner import ReplayMismatch, replay, run_chain, run_experiment

BASE = {
    "target": {"name": "gaussian", "params": {"mean": [0.0, 0.0], "cov": [[1.0, 0.9], [0.9, 1.0]]}},
    "n_steps": 6000,
    "root_seed": 123,
    "snapshot_every": 500,
}


def _cfg(tmp_path, name, **over):
    d = dict(BASE, output_dir=str(tmp_path / name))
    d.update(over)
    return config_from_dict(d)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_chain_independent_of_chain_count(tmp_path):
    multi = run_experiment(_cfg(tmp_path, "multi", n_chains=4))
    assert multi.exit_code == 0
    for i in range(4):
        # chain i run on its own, from a config that asks for a single chain
        single = run_chain(_cfg(tmp_path, "x", n_chains=1), i)
        assert _read(os.path.join(multi.out_dir, f"chain_{i:03d}.csv")) == single.csv_bytes()


def test_worker_count_does_not_change_outputs(tmp_path):
    a = run_experiment(_cfg(tmp_path, "w1", n_chains=3, workers=1))
    b = run_experiment(_cfg(tmp_path, "w3", n_chains=3, workers=3))
    assert a.exit_code == b.exit_code == 0
    for name in ["chain_000.csv", "chain_001.csv", "chain_002.csv", "chain_000.json", "summary.json"]:
        assert _read(os.path.join(a.out_dir, name)) == _read(os.path.join(b.out_dir, name)), name


def test_outputs_and_summary(tmp_path):
    rec = run_experiment(_cfg(tmp_path, "s", n_chains=2))
    names = {os.path.basename(p) for p in rec.files}
    assert {"config.yaml", "chain_000.csv", "chain_001.json", "summary.json", "metrics.json"} <= names
    summary = json.loads(_read(os.path.join(rec.out_dir, "summary.json")))
    c0 = summary["chains"][0]
    assert c0["status"] == "ok" and c0["reference"] == 2.0
    assert c0["min_cov_eigenvalue"] >= 0.01
    assert "sigma2_hat" in c0["batch_means"] or "skipped" in c0["batch_means"]


def test_replay_and_tamper(tmp_path):
    rec = run_experiment(_cfg(tmp_path, "r", n_chains=2))
    assert len(replay(rec.out_dir)) == 2
    p = os.path.join(rec.out_dir, "chain_001.csv")
    lines = _read(p).decode().splitlines(keepends=True)
    lines[5] = lines[5].replace("0", "1", 1) if "0" in lines[5] else lines[5] + " "
    with open(p, "w") as fh:
        fh.write("".join(lines))
    with pytest.raises(ReplayMismatch):
        replay(rec.out_dir)


def test_cauchy_negative_control(tmp_path):
    cfg = config_from_dict(
        {
            "target": {"name": "cauchy_like", "params": {"dim": 1}},
            "n_steps": 3000,
            "certify": {"enabled": True, "expect": "no_drift"},
            "output_dir": str(tmp_path / "cauchy"),
        }
    )
    rec = run_experiment(cfg)
    assert rec.exit_code == 0
    assert rec.certificate["outcome"] == "no_drift_found"
    assert rec.certificate["negative_control"] == "pass"


def test_certificate_written(tmp_path):
    cfg = config_from_dict(
        {
            "target": {"name": "gaussian", "params": {"mean": [0.0], "cov": [[1.0]]}},
            "n_steps": 3000,
            "certify": {"enabled": True},
            "output_dir": str(tmp_path / "cert"),
        }
    )
    rec = run_experiment(cfg)
    assert rec.exit_code == 0
    cert = json.loads(_read(os.path.join(rec.out_dir, "certificate.json")))
    assert cert["certificate"]["lambda"] < 1 and cert["audit"]["passed"]
    assert _read(os.path.join(rec.out_dir, "audit.csv")).decode().count("\n") == 5


def test_failed_chain_is_isolated(tmp_path, monkeypatch):
    import amcert.runner as runner

    real = runner.run_chain

    def flaky(cfg, index):
        if index == 1:
            raise RuntimeError("boom")
        return real(cfg, index)

    monkeypatch.setattr(runner, "run_chain", flaky)
    rec = run_experiment(_cfg(tmp_path, "f", n_chains=3))
    assert rec.exit_code == 1
    statuses = [c["status"] for c in rec.chains]
    assert statuses == ["ok", "failed", "ok"]
    assert any("boom" in f for f in rec.failures)
