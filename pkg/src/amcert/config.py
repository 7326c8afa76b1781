"""Experiment configuration: a YAML file validated into a :class:`RunConfig`.

Schema (every key except ``target`` is optional)::

    target:
      name: gaussian            # gaussian | power_exponential | gaussian_mixture | cauchy_like
      params: {mean: [0, 0], cov: [[1, 0.9], [0.9, 1]]}
    am:
      theta: null               # null -> 2.38**2 / d
      kappa: 0.01
      weight_exponent: 1.0
      recursion_variant: modified   # modified | original | original_printed
      burn_in: 0
    constraint: {enabled: false, t: 1.0e6, eps_prime: 0.05}
    n_steps: 10000
    n_chains: 1
    root_seed: 0
    x0: null                    # null -> origin
    sigma0: null                # null -> identity
    checkpoints: null           # null -> 20 geometric checkpoints
    snapshot_every: 100
    engine: auto                # auto | numba | python
    workers: 1
    output_dir: null            # null -> $AMCERT_OUTPUT_ROOT/run or ./amcert-runs/run
    diagnostics: {f: sq_norm, n_batches: 50, burn_frac: 0.1, growth_eps: 0.25, moment_r: 0.5}
    certify: {enabled: false, v: null, search: null, margin: 0.05, expect: drift}

``certify.expect: no_drift`` marks a negative control: the run passes when
no certificate is found.

Validation collects every violation before raising, so a broken file is
reported in one go.
"""
from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .adapt import VARIANTS, AmConfig, ConstraintSchedule
from .linear_core import NotPositiveDefinite, SpdMatrix
from .targets import TargetDensity, build_target

__all__ = [
    "ParseError",
    "ValidationError",
    "RunConfig",
    "parse_config",
    "parse_config_text",
    "load_mapping",
    "config_from_dict",
    "default_output_root",
    "F_CHOICES",
]

OUTPUT_ROOT_ENV = "AMCERT_OUTPUT_ROOT"
F_CHOICES = ("sq_norm", "first_coord")

_SECTIONS = {
    "target": {"name", "params"},
    "am": {"theta", "kappa", "weight_exponent", "recursion_variant", "burn_in"},
    "constraint": {"enabled", "t", "eps_prime"},
    "diagnostics": {"f", "n_batches", "burn_frac", "growth_eps", "moment_r"},
    "certify": {"enabled", "v", "search", "margin", "expect"},
}
_SCALARS = {"n_steps", "n_chains", "root_seed", "x0", "sigma0", "checkpoints", "snapshot_every", "engine", "workers", "output_dir"}

_DEFAULTS = {
    "am": {"theta": None, "kappa": 0.01, "weight_exponent": 1.0, "recursion_variant": "modified", "burn_in": 0},
    "constraint": {"enabled": False, "t": 1.0e6, "eps_prime": 0.05},
    "n_steps": 10_000,
    "n_chains": 1,
    "root_seed": 0,
    "x0": None,
    "sigma0": None,
    "checkpoints": None,
    "snapshot_every": 100,
    "engine": "auto",
    "workers": 1,
    "output_dir": None,
    "diagnostics": {"f": "sq_norm", "n_batches": 50, "burn_frac": 0.1, "growth_eps": 0.25, "moment_r": 0.5},
    "certify": {"enabled": False, "v": None, "search": None, "margin": 0.05, "expect": "drift"},
}


class ParseError(ValueError):
    """The file is not well-formed YAML (or not a mapping)."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ValidationError(ValueError):
    """All violations found in a config, as ``(field, message)`` pairs."""

    def __init__(self, errors: list):
        self.errors = list(errors)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.errors))


def default_output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "amcert-runs")


@dataclass
class RunConfig:
    """A fully validated experiment description.

    ``raw`` holds the normalized mapping (defaults filled in); :meth:`emit`
    writes it back out, and parsing that text gives an equal config.
    """

    target: TargetDensity
    am: AmConfig
    constraint: ConstraintSchedule
    n_steps: int
    n_chains: int
    root_seed: int
    x0: np.ndarray
    sigma0: SpdMatrix
    checkpoints: list
    snapshot_every: int
    engine: str
    workers: int
    output_dir: str
    diagnostics: dict
    certify: dict
    raw: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def emit(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False, default_flow_style=None)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunConfig):
            return NotImplemented
        return self.raw == other.raw

    def replace(self, **overrides) -> "RunConfig":
        """A new config with top-level keys replaced, re-validated."""
        raw = copy.deepcopy(self.raw)
        raw.update(overrides)
        return config_from_dict(raw)


def parse_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}") from exc
    return parse_config_text(text)


def load_mapping(text: str) -> dict:
    """YAML text to a mapping, with parse errors carrying line numbers."""
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ParseError(str(exc.problem or exc), line=line) from exc
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from exc
    if not isinstance(data, dict):
        raise ParseError("top level must be a mapping")
    return data


def parse_config_text(text: str) -> RunConfig:
    return config_from_dict(load_mapping(text))


def _plain(x):
    """Convert numpy containers to plain lists/floats for YAML output."""
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _merge(data: dict, errors: list) -> dict:
    raw = {}
    for key in data:
        if key not in _SECTIONS and key not in _SCALARS:
            errors.append((key, "unknown key"))
    if "target" not in data:
        errors.append(("target", "required"))
    for sec, keys in _SECTIONS.items():
        given = data.get(sec)
        if given is None:
            given = {}
        if not isinstance(given, dict):
            errors.append((sec, "must be a mapping"))
            given = {}
        for k in given:
            if k not in keys:
                errors.append((f"{sec}.{k}", "unknown key"))
        merged = dict(_DEFAULTS.get(sec, {}))
        merged.update({k: v for k, v in given.items() if k in keys})
        raw[sec] = _plain(merged)
    for key in sorted(_SCALARS, key=list(_DEFAULTS).index):
        raw[key] = _plain(data.get(key, _DEFAULTS[key]))
    return raw


def _int(raw, key, errors, lo=None):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, int):
        errors.append((key, "must be an integer"))
        return None
    if lo is not None and v < lo:
        errors.append((key, f"must be >= {lo}"))
        return None
    return v


def _num(sec, key, errors, *, positive=False, allow_none=False, where=None):
    v = sec.get(key)
    name = f"{where}.{key}" if where else key
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        errors.append((name, "must be a finite number"))
        return None
    if positive and not v > 0:
        errors.append((name, "must be positive"))
        return None
    return float(v)


def config_from_dict(data: dict) -> RunConfig:
    """Validate a mapping (as loaded from YAML) into a :class:`RunConfig`."""
    errors: list = []
    raw = _merge(data, errors)

    target = None
    tsec = raw["target"]
    if "target" in data:
        if not isinstance(tsec.get("name"), str):
            errors.append(("target.name", "must be a string"))
        else:
            try:
                target = build_target(tsec["name"], tsec.get("params") or {})
            except (KeyError, TypeError, ValueError) as exc:
                errors.append(("target.params", f"invalid parameters for {tsec['name']}: {exc}"))
        if tsec.get("params") is None:
            tsec["params"] = {}
    d = target.dim if target is not None else None

    a = raw["am"]
    theta = _num(a, "theta", errors, positive=True, allow_none=True, where="am")
    kappa = _num(a, "kappa", errors, positive=True, where="am")
    wexp = _num(a, "weight_exponent", errors, positive=True, where="am")
    if a.get("recursion_variant") not in VARIANTS:
        errors.append(("am.recursion_variant", f"must be one of {list(VARIANTS)}"))
    burn = a.get("burn_in")
    if isinstance(burn, bool) or not isinstance(burn, int) or burn < 0:
        errors.append(("am.burn_in", "must be a non-negative integer"))
    am = None
    if not any(f.startswith("am.") for f, _ in errors):
        am = AmConfig(theta, kappa, wexp, a["recursion_variant"], burn)

    c = raw["constraint"]
    if not isinstance(c.get("enabled"), bool):
        errors.append(("constraint.enabled", "must be true or false"))
    ct = _num(c, "t", errors, where="constraint")
    if ct is not None and ct < 1:
        errors.append(("constraint.t", "must be >= 1"))
    ce = _num(c, "eps_prime", errors, positive=True, where="constraint")
    sched = None
    if not any(f.startswith("constraint.") for f, _ in errors):
        sched = ConstraintSchedule(ct, ce, c["enabled"])

    n_steps = _int(raw, "n_steps", errors, lo=1)
    n_chains = _int(raw, "n_chains", errors, lo=1)
    root_seed = _int(raw, "root_seed", errors, lo=0)
    if root_seed is not None and root_seed >= 2**64:
        errors.append(("root_seed", "must fit in 64 bits"))
    snap = _int(raw, "snapshot_every", errors, lo=1)
    workers = _int(raw, "workers", errors, lo=1)
    if raw["engine"] not in ("auto", "numba", "python"):
        errors.append(("engine", "must be auto, numba or python"))

    x0 = sigma0 = None
    if d is not None:
        try:
            x0 = np.zeros(d) if raw["x0"] is None else np.asarray(raw["x0"], dtype=float).reshape(-1)
            if x0.size != d or not np.all(np.isfinite(x0)):
                errors.append(("x0", f"must be {d} finite numbers"))
            elif not math.isfinite(target.log_density(x0)):
                errors.append(("x0", "target density is zero at x0"))
        except (TypeError, ValueError):
            errors.append(("x0", f"must be {d} finite numbers"))
        try:
            s = np.eye(d) if raw["sigma0"] is None else np.atleast_2d(np.asarray(raw["sigma0"], dtype=float))
            if s.shape != (d, d):
                errors.append(("sigma0", f"must be a {d}x{d} matrix"))
            else:
                sigma0 = SpdMatrix(s)
                if kappa is not None and sigma0.min_eigenvalue() < kappa:
                    errors.append(
                        (
                            "sigma0",
                            f"smallest eigenvalue {sigma0.min_eigenvalue():.6g} is below kappa = {kappa}; "
                            "the drift/minorization argument needs every proposal covariance to have "
                            "all eigenvalues at least kappa (eigenvalue-floor precondition)",
                        )
                    )
        except (TypeError, ValueError, NotPositiveDefinite) as exc:
            errors.append(("sigma0", f"not a positive-definite matrix: {exc}"))

    cps = raw["checkpoints"]
    if n_steps is not None:
        if cps is None:
            cps = sorted({int(round(x)) for x in np.geomspace(min(10, n_steps), n_steps, 20)})
        elif not (isinstance(cps, list) and all(isinstance(k, int) and not isinstance(k, bool) for k in cps)):
            errors.append(("checkpoints", "must be a list of integers"))
            cps = None
        elif any(k < 1 or k > n_steps for k in cps) or any(b <= a for a, b in zip(cps, cps[1:])):
            errors.append(("checkpoints", f"must be strictly increasing within [1, {n_steps}]"))
            cps = None

    diag = raw["diagnostics"]
    if diag.get("f") not in F_CHOICES:
        errors.append(("diagnostics.f", f"must be one of {list(F_CHOICES)}"))
    nb = diag.get("n_batches")
    if isinstance(nb, bool) or not isinstance(nb, int) or nb < 20:
        errors.append(("diagnostics.n_batches", "must be an integer >= 20"))
    bf = _num(diag, "burn_frac", errors, where="diagnostics")
    if bf is not None and not 0 <= bf < 1:
        errors.append(("diagnostics.burn_frac", "must lie in [0, 1)"))
    _num(diag, "growth_eps", errors, positive=True, where="diagnostics")
    mr = _num(diag, "moment_r", errors, positive=True, where="diagnostics")
    if mr is not None and mr > 1:
        errors.append(("diagnostics.moment_r", "must lie in (0, 1]"))

    cert = raw["certify"]
    if not isinstance(cert.get("enabled"), bool):
        errors.append(("certify.enabled", "must be true or false"))
    m = _num(cert, "margin", errors, where="certify")
    if m is not None and not 0 < m < 1:
        errors.append(("certify.margin", "must lie in (0, 1)"))
    if cert.get("expect") not in ("drift", "no_drift"):
        errors.append(("certify.expect", "must be drift or no_drift"))
    if cert.get("search") is not None:
        srch = cert["search"]
        if not (isinstance(srch, list) and srch and all(isinstance(r, (int, float)) and r > 0 for r in srch)):
            errors.append(("certify.search", "must be a non-empty list of positive radii"))
    if cert.get("v") is not None and d is not None:
        try:
            vm = SpdMatrix(np.atleast_2d(np.asarray(cert["v"], dtype=float)))
            if vm.dim != d:
                errors.append(("certify.v", f"must be a {d}x{d} matrix"))
        except (TypeError, ValueError, NotPositiveDefinite) as exc:
            errors.append(("certify.v", f"not a positive-definite matrix: {exc}"))

    if raw["output_dir"] is not None and not isinstance(raw["output_dir"], str):
        errors.append(("output_dir", "must be a string"))

    if errors:
        raise ValidationError(errors)
    out_dir = raw["output_dir"] or os.path.join(default_output_root(), "run")
    return RunConfig(
        target, am, sched, n_steps, n_chains, root_seed, x0, sigma0, list(cps), snap,
        raw["engine"], workers, out_dir, dict(diag), dict(cert), raw,
    )
