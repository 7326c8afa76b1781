"""Run experiments described by a :class:`RunConfig` and replay them.

Output directory layout::

    config.yaml            normalized config echo
    chain_000.csv          trace (step, x0.., accepted, s_norm, constraint_hit)
    chain_000.json         sidecar: seed, norms, snapshots, csv_sha256
    summary.json           per-chain diagnostics and certificate results
    metrics.json           wall-clock and step-rate figures (not reproducible)
    certificate.json       when certification was requested
    audit.csv              determinant-scaling audit of the certificate

Chain ``i`` uses seed ``derive_seed(root_seed, i)``, so a chain's trace
does not depend on how many other chains run or on the worker count.
Everything except ``metrics.json`` is a deterministic function of the
config.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .adapt import ChainTrace, growth_monitor, run_am_chain
from .certify import NoDriftFound, det_scaling_audit, fit_drift_certificate, mt_bound
from .config import RunConfig, config_from_dict, parse_config
from .diagnostics import TooShort, adaptation_limit, clt_batch_means, running_average, v_moment_track
from .linear_core import SpdMatrix, derive_seed
from .targets import DriftFunction, TargetDensity

__all__ = ["OutputRecord", "run_experiment", "run_chain", "certify_target", "replay", "ReplayMismatch", "summary_function"]

DEFAULT_SEARCH = [0.5 * k for k in range(1, 21)]


class ReplayMismatch(RuntimeError):
    """A stored trace differs from its re-derivation."""


@dataclass
class OutputRecord:
    config_echo: str
    out_dir: str
    trace_files: list
    files: list
    chains: list
    certificate: dict | None
    metrics: dict
    exit_code: int
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def summary_function(name: str):
    if name == "sq_norm":
        return lambda xs: np.sum(np.atleast_2d(xs) ** 2, axis=1)
    if name == "first_coord":
        return lambda xs: np.atleast_2d(xs)[:, 0]
    raise ValueError(f"unknown summary function {name!r}")


def _reference_value(t: TargetDensity, name: str):
    if t.mean is None or t.cov is None:
        return None
    if name == "sq_norm":
        return float(np.sum(t.mean**2) + np.trace(t.cov))
    return float(t.mean[0])


def run_chain(cfg: RunConfig, index: int) -> ChainTrace:
    """Trace of chain ``index`` under ``cfg`` (no files written)."""
    return run_am_chain(
        cfg.am, cfg.constraint, cfg.target, cfg.x0, cfg.sigma0, cfg.n_steps,
        derive_seed(cfg.root_seed, index), snapshot_every=cfg.snapshot_every, engine=cfg.engine,
    )


def _chain_summary(cfg: RunConfig, trace: ChainTrace) -> dict:
    t = cfg.target
    diag = cfg.diagnostics
    f = summary_function(diag["f"])
    ref = _reference_value(t, diag["f"])
    series = running_average(trace, f, cfg.checkpoints, ref)
    out = {
        "seed": trace.seed,
        "acceptance_rate": trace.acceptance_rate,
        "constraint_hits": len(trace.constraint_hits),
        "csv_sha256": trace.csv_sha256(),
        "estimate": float(series.values[-1]),
        "reference": ref,
        "checkpoints": series.checkpoints.tolist(),
        "estimates": series.values.tolist(),
    }
    if ref is not None and ref != 0:
        out["relative_error"] = abs(out["estimate"] - ref) / abs(ref)
    a_state, a_mean, a_cov = growth_monitor(trace, diag["growth_eps"])
    out["growth"] = {"A_state": a_state, "A_mean": a_mean, "A_cov": a_cov}
    mt = v_moment_track(trace, DriftFunction.for_target(t), diag["moment_r"])
    out["v_moment"] = {"slope": mt.slope, "flagged": mt.flagged, "final_mean": float(mt.running_mean[-1])}
    try:
        bm = clt_batch_means(trace, f, diag["n_batches"], diag["burn_frac"])
        out["batch_means"] = {
            "n_batches": bm.n_batches,
            "batch_size": bm.batch_size,
            "sigma2_hat": bm.sigma2_hat,
            "skewness": bm.skewness,
            "excess_kurtosis": bm.excess_kurtosis,
        }
    except TooShort as exc:
        out["batch_means"] = {"skipped": str(exc)}
    if t.mean is not None and t.cov is not None:
        steps, dist = adaptation_limit(trace, t.mean, t.cov, cfg.am.kappa)
        target_cov = t.cov + cfg.am.kappa * np.eye(t.dim)
        final_cov = trace.snapshots[-1].cov.entries
        out["adaptation_limit"] = {
            "steps": steps.tolist(),
            "distance": dist.tolist(),
            "relative_cov_error": float(np.linalg.norm(final_cov - target_cov) / np.linalg.norm(target_cov)),
        }
    out["min_cov_eigenvalue"] = float(min(s.cov.min_eigenvalue() for s in trace.snapshots))
    return out


def _chain_job(raw: dict, index: int, out_dir: str) -> dict:
    """Worker entry: run, write and summarize one chain; never raises."""
    start = time.perf_counter()
    try:
        cfg = config_from_dict(raw)
        trace = run_chain(cfg, index)
        stem = os.path.join(out_dir, f"chain_{index:03d}")
        trace.write(stem + ".csv", stem + ".json")
        summary = _chain_summary(cfg, trace)
        # paths relative to the run directory keep summary.json relocatable
        summary.update(index=index, status="ok", files=[f"chain_{index:03d}.csv", f"chain_{index:03d}.json"])
    except Exception as exc:  # isolate per-chain failures
        summary = {"index": index, "status": "failed", "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc(), "files": []}
    summary["_seconds"] = time.perf_counter() - start
    return summary


def certify_target(t: TargetDensity, v=None, search=None, margin: float = 0.05, audit_scales=(1.0, 2.0, 4.0, 8.0)) -> dict:
    """Fit a certificate, derive the convergence bound and run the scaling audit.

    Raises :class:`NoDriftFound` if no certificate exists on the search grid.
    """
    v = SpdMatrix(np.eye(t.dim)) if v is None else (v if isinstance(v, SpdMatrix) else SpdMatrix(np.atleast_2d(v)))
    search = DEFAULT_SEARCH if search is None else list(search)
    cert = fit_drift_certificate(t, v, search, margin)
    bound = mt_bound(cert.lambda_, cert.b, cert.delta)
    out = {"certificate": cert.to_dict(), "bound": bound.to_dict(), "one_minus_rho": bound.one_minus_rho}
    if audit_scales:
        floor = v.certified_floor
        table = det_scaling_audit(t, [v.scaled(s) for s in audit_scales], floor, search, margin)
        out["audit"] = {"rows": table.rows, "c_max": table.c_max, "c_min": table.c_min, "passed": table.passed}
        out["_audit_csv"] = table.to_csv()
    return out


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def run_experiment(cfg: RunConfig) -> OutputRecord:
    """Run every chain of ``cfg``, write outputs, and report an exit code.

    The exit code is 0 iff every chain finished and every requested check
    passed; a certification marked ``expect: no_drift`` passes exactly when
    no certificate is found.
    """
    start = time.perf_counter()
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    files = []
    echo = cfg.emit()
    cpath = os.path.join(out_dir, "config.yaml")
    with open(cpath, "w", encoding="utf-8") as fh:
        fh.write(echo)
    files.append(cpath)

    jobs = range(cfg.n_chains)
    if cfg.workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.n_chains)) as pool:
            chains = list(pool.map(_chain_job, [cfg.raw] * cfg.n_chains, jobs, [out_dir] * cfg.n_chains))
    else:
        chains = [_chain_job(cfg.raw, i, out_dir) for i in jobs]
    # join barrier: everything below runs after all chains finished
    failures = [f"chain {c['index']}: {c['error']}" for c in chains if c["status"] != "ok"]
    chain_files = [os.path.join(out_dir, p) for c in chains for p in c["files"]]
    trace_files = [p for p in chain_files if p.endswith(".csv")]
    files.extend(chain_files)
    seconds = {c["index"]: c.pop("_seconds") for c in chains}
    for c in chains:
        if c["status"] == "ok" and c["min_cov_eigenvalue"] < cfg.am.kappa - 1e-12:
            failures.append(f"chain {c['index']}: covariance eigenvalue floor violated")

    certificate = None
    if cfg.certify["enabled"]:
        expect = cfg.certify["expect"]
        try:
            certificate = certify_target(cfg.target, cfg.certify["v"], cfg.certify["search"], cfg.certify["margin"])
            certificate["outcome"] = "certificate_found"
            if expect == "no_drift":
                failures.append("certify: expected NoDriftFound, found a certificate")
        except NoDriftFound as exc:
            certificate = {"outcome": "no_drift_found", "message": str(exc)}
            if expect == "drift":
                failures.append(f"certify: {exc}")
            else:
                certificate["negative_control"] = "pass"
        audit_csv = certificate.pop("_audit_csv", None)
        p = os.path.join(out_dir, "certificate.json")
        _write_json(p, certificate)
        files.append(p)
        if audit_csv is not None:
            p = os.path.join(out_dir, "audit.csv")
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(audit_csv)
            files.append(p)

    exit_code = 0 if not failures else 1
    spath = os.path.join(out_dir, "summary.json")
    _write_json(spath, {"chains": chains, "failures": failures, "exit_code": exit_code})
    files.append(spath)
    wall = time.perf_counter() - start
    total_steps = cfg.n_steps * sum(1 for c in chains if c["status"] == "ok")
    metrics = {
        "wall_clock_s": wall,
        "chain_seconds": seconds,
        "steps_per_s": total_steps / wall if wall > 0 else math.inf,
    }
    mpath = os.path.join(out_dir, "metrics.json")
    _write_json(mpath, metrics)
    files.append(mpath)
    return OutputRecord(echo, out_dir, trace_files, files, chains, certificate, metrics, exit_code, failures)


def replay(out_dir: str) -> list:
    """Re-derive every trace of a run directory and compare CSV hashes.

    Returns the list of verified CSV paths; raises :class:`ReplayMismatch`
    on the first trace whose stored bytes, recorded hash or re-derived
    bytes disagree.
    """
    cfg = parse_config(os.path.join(out_dir, "config.yaml"))
    verified = []
    for i in range(cfg.n_chains):
        stem = os.path.join(out_dir, f"chain_{i:03d}")
        if not os.path.exists(stem + ".csv"):
            raise ReplayMismatch(f"missing trace {stem}.csv")
        with open(stem + ".csv", "rb") as fh:
            stored = hashlib.sha256(fh.read()).hexdigest()
        with open(stem + ".json", encoding="utf-8") as fh:
            recorded = json.load(fh).get("csv_sha256")
        fresh = run_chain(cfg, i).csv_sha256()
        if not (stored == recorded == fresh):
            raise ReplayMismatch(
                f"hash mismatch for {stem}.csv: stored {stored[:12]}, recorded {str(recorded)[:12]}, re-derived {fresh[:12]}"
            )
        verified.append(stem + ".csv")
    return verified
