"""Command-line interface: ``amcert {sample,certify,verify-target,diagnose,replay}``.

Exit codes: 0 success, 1 a check failed or a run had failures, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .certify import NoDriftFound
from .config import ParseError, ValidationError, config_from_dict, default_output_root, load_mapping, parse_config
from .linear_core import RngStream
from .runner import ReplayMismatch, certify_target, replay, run_experiment
from .targets import build_target, verify_contour_regularity, verify_super_exponential


def _json_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON: {exc}") from exc


def _floats(text: str) -> list:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {exc}") from exc


def _default_params(name: str) -> dict:
    if name == "gaussian":
        return {"mean": [0.0], "cov": [[1.0]]}
    if name == "power_exponential":
        return {"p": 3.0, "dim": 1}
    if name == "cauchy_like":
        return {"dim": 1}
    if name == "gaussian_mixture":
        return {"weights": [0.5, 0.5], "means": [[-2.0], [2.0]], "covs": [[[1.0]], [[1.0]]]}
    return {}


def _run_overrides(args) -> dict:
    over = {}
    for flag, key in (("seed", "root_seed"), ("chains", "n_chains"), ("steps", "n_steps"), ("out", "output_dir"), ("workers", "workers")):
        val = getattr(args, flag, None)
        if val is not None:
            over[key] = val
    return over


def _load_config(args, extra: dict | None = None):
    try:
        with open(args.config, encoding="utf-8") as fh:
            data = load_mapping(fh.read())
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}") from exc
    data.update(_run_overrides(args))
    if extra:
        for sec, vals in extra.items():
            data.setdefault(sec, {}).update(vals)
    return config_from_dict(data)


def cmd_sample(args) -> int:
    cfg = _load_config(args, {"certify": {"enabled": False}})
    rec = run_experiment(cfg)
    print(json.dumps({"out_dir": rec.out_dir, "exit_code": rec.exit_code, "failures": rec.failures, "files": rec.files}, indent=2))
    return rec.exit_code


def cmd_certify(args) -> int:
    if args.config:
        cfg = _load_config(args)
        t, v = cfg.target, cfg.certify["v"]
        search, margin, expect = cfg.certify["search"], cfg.certify["margin"], cfg.certify["expect"]
        out_dir = cfg.output_dir
    else:
        params = args.params if args.params is not None else _default_params(args.target)
        t = build_target(args.target, params)
        v = args.v
        search, margin = args.search, args.margin
        expect = "no_drift" if args.expect_no_drift else "drift"
        out_dir = args.out or os.path.join(default_output_root(), "certify")
    try:
        result = certify_target(t, v, search, margin)
        outcome = "certificate_found"
    except NoDriftFound as exc:
        result = {"message": str(exc)}
        outcome = "no_drift_found"
    result["outcome"] = outcome
    audit_csv = result.pop("_audit_csv", None)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "certificate.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if audit_csv is not None:
        with open(os.path.join(out_dir, "audit.csv"), "w", encoding="utf-8") as fh:
            fh.write(audit_csv)
    print(json.dumps(result, indent=2, sort_keys=True))
    ok = (outcome == "certificate_found") == (expect == "drift")
    return 0 if ok else 1


def cmd_verify_target(args) -> int:
    params = args.params if args.params is not None else _default_params(args.target)
    if args.dim is not None:
        if args.target == "gaussian":
            params = {"mean": [0.0] * args.dim, "cov": np.eye(args.dim).tolist()}
        else:
            params = dict(params, dim=args.dim)
    t = build_target(args.target, params)
    radii = args.radii or [2.0, 4.0, 8.0, 16.0, 32.0]
    tail = verify_super_exponential(t, args.rho, radii, args.dirs, RngStream(args.seed))
    contour = verify_contour_regularity(t, radii, args.dirs, RngStream(args.seed + 1))
    print(json.dumps({"tail": json.loads(tail.to_json()), "contour": json.loads(contour.to_json())}, indent=2))
    return 0 if tail.verdict == "pass" else 1


def cmd_diagnose(args) -> int:
    from .adapt import ChainTrace
    from .runner import _chain_summary

    cfg = parse_config(os.path.join(args.run_dir, "config.yaml"))
    out = []
    for i in range(cfg.n_chains):
        stem = os.path.join(args.run_dir, f"chain_{i:03d}")
        if not os.path.exists(stem + ".csv"):
            out.append({"index": i, "status": "missing"})
            continue
        trace = ChainTrace.read(stem + ".csv", stem + ".json")
        summary = _chain_summary(cfg, trace)
        summary["index"] = i
        out.append(summary)
    print(json.dumps(out, indent=2))
    return 0 if all(c.get("status") != "missing" for c in out) else 1


def cmd_replay(args) -> int:
    try:
        ok = replay(args.run_dir)
    except ReplayMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in ok:
        print(f"ok {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amcert", description="Adaptive Metropolis runs with drift/minorization certificates.")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, config_required):
        sp.add_argument("--config", required=config_required, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="root seed override")
        sp.add_argument("--chains", type=int, help="number of chains override")
        sp.add_argument("--steps", type=int, help="steps per chain override")
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("--workers", type=int, help="worker processes override")

    s = sub.add_parser("sample", help="run AM chains and write traces and diagnostics")
    run_flags(s, True)
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("certify", help="fit a drift/minorization certificate and convergence bound")
    run_flags(c, False)
    c.add_argument("--target", default="gaussian")
    c.add_argument("--params", type=_json_arg, help="target parameters as JSON")
    c.add_argument("--v", type=_json_arg, help="proposal covariance as JSON (default identity)")
    c.add_argument("--search", type=_floats, help="comma-separated candidate radii")
    c.add_argument("--margin", type=float, default=0.05)
    c.add_argument("--expect-no-drift", action="store_true", help="negative control: succeed when no certificate exists")
    c.set_defaults(func=cmd_certify)

    v = sub.add_parser("verify-target", help="shell sweeps for the tail and contour hypotheses")
    v.add_argument("target")
    v.add_argument("--params", type=_json_arg)
    v.add_argument("--dim", type=int)
    v.add_argument("--rho", type=float, default=1.5)
    v.add_argument("--radii", type=_floats)
    v.add_argument("--dirs", type=int, default=64)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify_target)

    d = sub.add_parser("diagnose", help="recompute diagnostics from a run directory")
    d.add_argument("run_dir")
    d.set_defaults(func=cmd_diagnose)

    r = sub.add_parser("replay", help="re-derive traces and verify the stored CSV hashes")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
