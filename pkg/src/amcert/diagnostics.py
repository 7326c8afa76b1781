"""Ergodic averages, moment tracking, batch means and adaptation limits.

Every function here is a pure function of a :class:`ChainTrace` (or of a
plain state array), so re-running a diagnostic reproduces its report.
Functions ``f`` act on one state vector; when ``f`` accepts a whole
``(n, d)`` array and returns ``(n,)`` it is applied once to all rows.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .adapt import ChainTrace
from .linear_core import SpdMatrix, as_vector
from .targets import DriftFunction

__all__ = [
    "TooShort",
    "EstimatorSeries",
    "MomentTrack",
    "BatchMeansReport",
    "running_average",
    "v_moment_track",
    "clt_batch_means",
    "adaptation_limit",
]


class TooShort(ValueError):
    """Not enough post-burn samples for the requested batches."""


def _states(trace) -> np.ndarray:
    if isinstance(trace, ChainTrace):
        return trace.states
    s = np.asarray(trace, dtype=float)
    return s[:, None] if s.ndim == 1 else s


def _apply(f: Callable, xs: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(f(xs), dtype=float)
        if out.shape == (xs.shape[0],):
            return out
    except Exception:
        pass
    return np.array([float(f(x)) for x in xs])


@dataclass
class EstimatorSeries:
    """Ergodic averages ``I_n = (1/n) sum_{k=1}^n f(X_k)`` at checkpoints."""

    checkpoints: np.ndarray
    values: np.ndarray
    reference: float | None = None

    def __post_init__(self):
        self.checkpoints = np.asarray(self.checkpoints, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.checkpoints) <= 0):
            raise ValueError("checkpoints must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("estimator values must be finite")

    @property
    def relative_error(self) -> np.ndarray:
        if self.reference is None:
            raise ValueError("no reference value")
        return np.abs(self.values - self.reference) / abs(self.reference)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "estimate"])
        for n, v in zip(self.checkpoints.tolist(), self.values.tolist()):
            w.writerow([n, repr(v)])
        return buf.getvalue()


def running_average(trace, f: Callable, checkpoints: Sequence[int], reference: float | None = None) -> EstimatorSeries:
    """Running averages of ``f(X_1), ..., f(X_n)`` at each checkpoint ``n``.

    The starting state ``X_0`` is excluded. Sums between checkpoints are
    formed with :func:`math.fsum`, so each value is the correctly rounded
    mean of the rounded ``f`` values.
    """
    xs = _states(trace)[1:]
    cps = np.asarray(checkpoints, dtype=int)
    if cps.size and (cps[0] < 1 or cps[-1] > xs.shape[0]):
        raise ValueError(f"checkpoints must lie in [1, {xs.shape[0]}]")
    if np.any(np.diff(cps) <= 0):
        raise ValueError("checkpoints must be strictly increasing")
    fx = _apply(f, xs[: cps[-1]] if cps.size else xs[:0])
    values = []
    partials: list = []
    prev = 0
    for n in cps.tolist():
        # exact partial sums are kept as a list of floats for fsum
        partials.append(math.fsum(fx[prev:n]))
        partials_total = math.fsum(partials)
        values.append(partials_total / n)
        prev = n
    return EstimatorSeries(cps, np.array(values), reference)


@dataclass
class MomentTrack:
    """Running max and running mean of ``V^r(X_k)``."""

    r: float
    steps: np.ndarray
    running_max: np.ndarray
    running_mean: np.ndarray
    slope: float
    threshold: float
    flagged: bool

    def to_csv(self) -> str:
        lines = ["step,running_max,running_mean"]
        lines += [f"{k},{a!r},{b!r}" for k, a, b in zip(self.steps.tolist(), self.running_max.tolist(), self.running_mean.tolist())]
        return "\n".join(lines) + "\n"


def v_moment_track(trace, df: DriftFunction, r: float, threshold: float = 1.0, n_points: int = 200) -> MomentTrack:
    """Empirical ``V^r`` moments along a trace.

    The growth flag is raised when the log-log slope of the running max of
    ``V^r`` over the last decade of steps exceeds ``threshold``. Values are
    handled as ``log V`` throughout, so an overflowing ``V`` shows up as
    ``inf`` in the outputs instead of aborting.
    """
    r = float(r)
    if not 0 < r <= 1:
        raise ValueError("r must lie in (0, 1]")
    xs = _states(trace)[1:]
    n = xs.shape[0]
    if n < 2:
        raise ValueError("trace too short")
    lv = r * df.log_V_many(xs)
    log_max = np.maximum.accumulate(lv)
    log_csum = np.logaddexp.accumulate(lv)
    steps = np.unique(np.geomspace(1, n, min(n_points, n)).astype(int))
    log_mean = log_csum[steps - 1] - np.log(steps)
    # slope over the last decade [n/10, n]
    lo = max(1, n // 10)
    sel = steps >= lo
    if sel.sum() >= 2 and np.all(np.isfinite(log_max[steps[sel] - 1])):
        slope = float(np.polyfit(np.log(steps[sel]), log_max[steps[sel] - 1], 1)[0])
    else:
        slope = math.inf
    with np.errstate(over="ignore"):
        rmax, rmean = np.exp(log_max[steps - 1]), np.exp(log_mean)
    return MomentTrack(r, steps, rmax, rmean, slope, float(threshold), bool(slope > threshold))


@dataclass
class BatchMeansReport:
    n_batches: int
    batch_size: int
    batch_means: np.ndarray
    sigma2_hat: float
    skewness: float
    excess_kurtosis: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["batch_means"] = self.batch_means.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        lines = ["batch,mean"] + [f"{i},{m!r}" for i, m in enumerate(self.batch_means.tolist())]
        return "\n".join(lines) + "\n"


def clt_batch_means(trace, f: Callable, n_batches: int = 50, burn_frac: float = 0.1) -> BatchMeansReport:
    """Non-overlapping batch means of ``f`` after discarding a burn-in fraction.

    ``sigma2_hat = batch_size * var(batch means)`` (unbiased variance). The
    skewness and excess kurtosis summarize the batch means; both are 0
    when the batch means are all equal.
    """
    if n_batches < 20:
        raise ValueError("n_batches must be at least 20")
    if not 0 <= burn_frac < 1:
        raise ValueError("burn_frac must lie in [0, 1)")
    xs = _states(trace)[1:]
    start = int(math.floor(burn_frac * xs.shape[0]))
    post = xs[start:]
    size = post.shape[0] // n_batches
    if size < 50:
        raise TooShort(f"{post.shape[0]} post-burn samples give {size} per batch; at least 50 needed")
    fx = _apply(f, post[: size * n_batches])
    # centre first so that adding a constant to f leaves the estimate unchanged
    fx = fx - fx.mean()
    means = fx.reshape(n_batches, size).mean(axis=1)
    var = float(np.var(means, ddof=1))
    if var <= 1e-300 or np.ptp(means) <= 1e-12 * max(1.0, float(np.max(np.abs(means)))):
        skew = kurt = 0.0
        var = 0.0 if np.ptp(means) == 0 else var
    else:
        skew = float(stats.skew(means))
        kurt = float(stats.kurtosis(means))
    return BatchMeansReport(n_batches, size, means, size * var, skew, kurt)


def adaptation_limit(trace: ChainTrace, ref_mean, ref_cov, kappa: float) -> tuple[np.ndarray, np.ndarray]:
    """Distance ``|S_n - (m_pi, v_pi + kappa I)|`` at every snapshot.

    Returns ``(steps, distances)`` with the norm
    ``|s| = max(||mean||_2, ||cov||_F)``.
    """
    d = trace.dim
    m = as_vector(ref_mean, d)
    c = ref_cov.entries if isinstance(ref_cov, SpdMatrix) else np.asarray(ref_cov, dtype=float)
    target = c + kappa * np.eye(d)
    steps = np.array([s.n for s in trace.snapshots], dtype=int)
    dist = np.array(
        [
            max(float(np.linalg.norm(s.mean - m)), float(np.linalg.norm(s.cov.entries - target, "fro")))
            for s in trace.snapshots
        ]
    )
    return steps, dist
