"""Target densities, the drift function V, and numeric hypothesis checks.

A :class:`TargetDensity` is an unnormalized log density with a gradient.
Built-ins (:func:`gaussian`, :func:`power_exponential`,
:func:`gaussian_mixture`, :func:`cauchy_like`) are vectorized over a leading
axis, know their reference moments where these exist, and can hand a
compiled log density to the fast chain loop.

The verifiers turn the two tail hypotheses of the AM ergodicity theorem into
shell sweeps that report raw values plus a three-way verdict; a limit cannot
be checked by a machine, so the verdicts are evidence, not proof.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .linear_core import RngStream, SpdMatrix, as_vector

__all__ = [
    "TargetDensity",
    "DriftFunction",
    "TailReport",
    "ContourReport",
    "ContourCheck",
    "FitFailed",
    "ContourNotFound",
    "gaussian",
    "power_exponential",
    "gaussian_mixture",
    "cauchy_like",
    "build_target",
    "find_log_sup",
    "drift_V",
    "verify_super_exponential",
    "verify_contour_regularity",
    "radial_growth_estimate",
    "contour_ratio_check",
]

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
# kind codes understood by _jit.builtin_logpdf
_GAUSSIAN, _MIXTURE, _POWER_EXP, _CAUCHY = 0, 1, 2, 3
# log of the largest finite double
_LOG_MAX = math.log(np.finfo(float).max)


class FitFailed(RuntimeError):
    pass


class ContourNotFound(RuntimeError):
    pass


class TargetDensity:
    """Unnormalized log density on ``R^dim``.

    Parameters
    ----------
    dim : int
    log_density : callable
        ``x -> log pi(x)`` for a single point, or for an ``(n, dim)`` batch
        when ``vectorized`` is true.
    gradient : callable, optional
        ``x -> grad log pi(x)``; same batching convention. Central finite
        differences with step ``fd_step`` are used when omitted.
    log_sup : float, optional
        ``log sup_x pi(x)``. Found by multi-start mode search when omitted.
    """

    def __init__(
        self,
        dim: int,
        log_density: Callable,
        gradient: Callable | None = None,
        *,
        vectorized: bool = False,
        log_sup: float | None = None,
        mean=None,
        cov=None,
        name: str = "custom",
        params: dict | None = None,
        fd_step: float = 1e-5,
        mode_starts=None,
        jit_params: tuple | None = None,
    ):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self._logpdf = log_density
        self._grad = gradient
        self.vectorized = vectorized
        self.fd_step = fd_step
        self.name = name
        self.params = dict(params or {})
        self.mean = None if mean is None else as_vector(mean, self.dim)
        self.cov = None if cov is None else np.atleast_2d(np.asarray(cov, dtype=float))
        self._log_sup = log_sup
        self._mode_starts = mode_starts
        self.jit_params = jit_params

    # -- evaluation -----------------------------------------------------
    def log_density(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        if self.vectorized:
            return float(self._logpdf(x[None, :])[0])
        return float(self._logpdf(x))

    def log_density_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim)
        if self.vectorized:
            return np.asarray(self._logpdf(xs), dtype=float)
        return np.array([float(self._logpdf(x)) for x in xs])

    def gradient(self, x) -> np.ndarray:
        return self.gradient_many(np.asarray(x, dtype=float).reshape(1, self.dim))[0]

    def gradient_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim)
        if self._grad is None:
            return self.fd_gradient_many(xs)
        if self.vectorized:
            return np.asarray(self._grad(xs), dtype=float).reshape(xs.shape)
        return np.array([np.asarray(self._grad(x), dtype=float) for x in xs]).reshape(xs.shape)

    def fd_gradient_many(self, xs, h: float | None = None) -> np.ndarray:
        """Central finite-difference gradient of the log density."""
        h = self.fd_step if h is None else h
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim)
        out = np.empty_like(xs)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            out[:, i] = (self.log_density_many(xs + e) - self.log_density_many(xs - e)) / (2 * h)
        return out

    @property
    def has_analytic_gradient(self) -> bool:
        return self._grad is not None

    @property
    def log_sup(self) -> float:
        if self._log_sup is None:
            self._log_sup = find_log_sup(self, self._mode_starts)[0]
        return self._log_sup

    def spec(self) -> dict:
        return {"name": self.name, "params": self.params}

    def __repr__(self) -> str:
        return f"TargetDensity(name={self.name!r}, dim={self.dim})"


# ---------------------------------------------------------------------------
# built-in targets


def gaussian(mean, cov) -> TargetDensity:
    """``pi(x) ∝ exp(-(x - m)^T cov^{-1} (x - m) / 2)``; sup log pi = 0."""
    m = as_vector(mean)
    c = SpdMatrix(cov)
    if c.dim != m.size:
        raise ValueError("mean and cov dimensions differ")
    prec = np.linalg.inv(c.entries)
    prec = 0.5 * (prec + prec.T)

    def logpdf(xs):
        z = xs - m
        return -0.5 * np.einsum("ni,ij,nj->n", z, prec, z)

    def grad(xs):
        return -(xs - m) @ prec

    jit = (_GAUSSIAN, m[None, :], prec[None], np.zeros(1), 0.0)

    return TargetDensity(
        m.size,
        logpdf,
        grad,
        vectorized=True,
        log_sup=0.0,
        mean=m,
        cov=c.entries,
        name="gaussian",
        params={"mean": m.tolist(), "cov": c.entries.tolist()},
        jit_params=jit,
    )


def power_exponential(p: float, dim: int = 1) -> TargetDensity:
    """``pi(x) ∝ exp(-||x||^p)`` with ``p > 1``."""
    if not p > 1:
        raise ValueError("power_exponential needs p > 1")
    p = float(p)

    def logpdf(xs):
        return -np.linalg.norm(xs, axis=1) ** p

    def grad(xs):
        r = np.linalg.norm(xs, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(r > 0, p * r ** (p - 2.0), 0.0)
        return -f[:, None] * xs

    # E||x||^2 = Gamma((d+2)/p) / Gamma(d/p) for density ∝ exp(-r^p) in R^d
    er2 = math.exp(special.gammaln((dim + 2) / p) - special.gammaln(dim / p))

    jit = (_POWER_EXP, np.zeros((1, dim)), np.zeros((1, dim, dim)), np.zeros(1), p)

    return TargetDensity(
        dim,
        logpdf,
        grad,
        vectorized=True,
        log_sup=0.0,
        mean=np.zeros(dim),
        cov=(er2 / dim) * np.eye(dim),
        name="power_exponential",
        params={"p": p, "dim": dim},
        jit_params=jit,
    )


def gaussian_mixture(weights, means, covs) -> TargetDensity:
    """Normalized mixture of Gaussians; sup pi is found numerically."""
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("mixture weights must be positive")
    w = w / w.sum()
    mus = np.atleast_2d(np.asarray(means, dtype=float))
    if mus.shape[0] != w.size:
        mus = mus.T
    d = mus.shape[1]
    mats = [SpdMatrix(np.reshape(c, (d, d))) for c in covs]
    if len(mats) != w.size:
        raise ValueError("need one covariance per component")
    precs = np.array([np.linalg.inv(c.entries) for c in mats])
    lognorm = np.array(
        [math.log(wk) - 0.5 * d * math.log(2 * math.pi) - 0.5 * c.logdet() for wk, c in zip(w, mats)]
    )

    def _comp(xs):
        z = xs[:, None, :] - mus[None, :, :]
        q = np.einsum("nki,kij,nkj->nk", z, precs, z)
        return z, lognorm[None, :] - 0.5 * q

    def logpdf(xs):
        return special.logsumexp(_comp(xs)[1], axis=1)

    def grad(xs):
        z, lc = _comp(xs)
        resp = np.exp(lc - special.logsumexp(lc, axis=1, keepdims=True))
        return -np.einsum("nk,kij,nkj->ni", resp, precs, z)

    mean = w @ mus
    cov = sum(wk * (c.entries + np.outer(mk - mean, mk - mean)) for wk, c, mk in zip(w, mats, mus))

    jit = (_MIXTURE, mus, precs, lognorm, 0.0)

    return TargetDensity(
        d,
        logpdf,
        grad,
        vectorized=True,
        mean=mean,
        cov=cov,
        name="gaussian_mixture",
        params={"weights": w.tolist(), "means": mus.tolist(), "covs": [c.entries.tolist() for c in mats]},
        mode_starts=mus,
        jit_params=jit,
    )


def cauchy_like(dim: int = 1) -> TargetDensity:
    """``pi(x) ∝ (1 + ||x||^2)^{-(d+1)/2}``: heavy tails, the negative control."""
    a = 0.5 * (dim + 1)

    def logpdf(xs):
        return -a * np.log1p(np.sum(xs * xs, axis=1))

    def grad(xs):
        return -(2 * a / (1.0 + np.sum(xs * xs, axis=1)))[:, None] * xs

    jit = (_CAUCHY, np.zeros((1, dim)), np.zeros((1, dim, dim)), np.zeros(1), a)

    return TargetDensity(
        dim,
        logpdf,
        grad,
        vectorized=True,
        log_sup=0.0,
        name="cauchy_like",
        params={"dim": dim},
        jit_params=jit,
    )


_BUILDERS = {
    "gaussian": lambda p: gaussian(p["mean"], p["cov"]),
    "power_exponential": lambda p: power_exponential(p["p"], int(p.get("dim", 1))),
    "gaussian_mixture": lambda p: gaussian_mixture(p["weights"], p["means"], p["covs"]),
    "cauchy_like": lambda p: cauchy_like(int(p.get("dim", 1))),
}


def build_target(name: str, params: dict | None = None) -> TargetDensity:
    """Construct a built-in target from its name and parameter mapping."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown target {name!r}; choose from {sorted(_BUILDERS)}") from None
    return builder(dict(params or {}))


def find_log_sup(t: TargetDensity, starts=None, n_random: int = 8, seed: int = 0):
    """Multi-start local ascent on ``log pi``; returns ``(log_sup, argmax)``."""
    pts = [] if starts is None else [np.asarray(s, dtype=float).reshape(t.dim) for s in starts]
    pts.append(np.zeros(t.dim))
    if t.mean is not None:
        pts.append(t.mean)
    rng = np.random.default_rng(seed)
    pts.extend(rng.standard_normal((n_random, t.dim)) * 3.0)
    best, arg = -np.inf, None
    for x0 in pts:
        res = optimize.minimize(
            lambda x: -t.log_density(x),
            x0,
            jac=lambda x: -t.gradient(x),
            method="BFGS",
            options={"gtol": 1e-12, "maxiter": 2000},
        )
        val = t.log_density(res.x)
        if val > best:
            best, arg = val, res.x
    return float(best), arg


# ---------------------------------------------------------------------------
# drift function


@dataclass(frozen=True)
class DriftFunction:
    """``V(x) = c_V pi(x)^{-1/2}`` with ``c_V = (sup pi)^{1/2}``."""

    target: TargetDensity
    log_c_V: float

    @classmethod
    def for_target(cls, t: TargetDensity) -> "DriftFunction":
        return cls(t, 0.5 * t.log_sup)

    def log_V_many(self, xs) -> np.ndarray:
        return self.log_c_V - 0.5 * self.target.log_density_many(xs)

    def V_many(self, xs) -> np.ndarray:
        lv = self.log_V_many(xs)
        with np.errstate(over="ignore"):
            return np.where(lv > _LOG_MAX, np.inf, np.exp(np.minimum(lv, _LOG_MAX)))


def drift_V(df: DriftFunction, x) -> float:
    """``V(x)`` computed in log space; ``inf`` when it overflows a double."""
    x = as_vector(x, df.target.dim)
    lv = df.log_c_V - 0.5 * df.target.log_density(x)
    if not lv <= _LOG_MAX:
        return math.inf
    return math.exp(lv)


# ---------------------------------------------------------------------------
# tail verifiers


@dataclass
class TailReport:
    rho: float
    shell_radii: list
    shell_suprema: list
    verdict: str

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class ContourReport:
    shell_radii: list
    shell_suprema: list
    verdict: str

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _directions(d: int, n: int, rng: RngStream) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    return rng.spawn_sphere(n, d)


def _check_radii(radii) -> np.ndarray:
    radii = np.asarray(radii, dtype=float).ravel()
    if radii.size and (np.any(np.diff(radii) <= 0) or radii[0] < 1):
        raise ValueError("radii must be strictly increasing and >= 1")
    return radii


def verify_super_exponential(
    t: TargetDensity,
    rho: float,
    radii: Sequence[float],
    dirs_per_shell: int,
    rng: RngStream,
    threshold: float = 10.0,
) -> TailReport:
    """Shell suprema of ``x / ||x||^rho . grad log pi(x)``.

    ``pass`` when the last three suprema strictly decrease and the outermost
    is below ``-threshold``; ``fail`` when they do not decrease (a finite
    limit); ``inconclusive`` otherwise, including too few shells or a
    non-finite gradient.
    """
    if not rho > 1:
        raise ValueError("rho must be > 1")
    radii = _check_radii(radii)
    sups = []
    for r in radii:
        dirs = _directions(t.dim, dirs_per_shell, rng)
        g = t.gradient_many(r * dirs)
        vals = r ** (1.0 - rho) * np.einsum("ni,ni->n", dirs, g)
        sups.append(float(np.max(vals)) if np.all(np.isfinite(vals)) else math.nan)
    verdict = _tail_verdict(sups, threshold)
    return TailReport(float(rho), radii.tolist(), sups, verdict)


def _tail_verdict(sups, threshold) -> str:
    if len(sups) < 3 or not np.all(np.isfinite(sups)):
        return INCONCLUSIVE
    last = sups[-3:]
    if not (last[0] > last[1] > last[2]):
        return FAIL
    return PASS if last[2] < -threshold else INCONCLUSIVE


def _contour_integrand(dirs: np.ndarray, g: np.ndarray) -> np.ndarray:
    gn = np.linalg.norm(g, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.einsum("ni,ni->n", dirs, g) / gn


def verify_contour_regularity(
    t: TargetDensity,
    radii: Sequence[float],
    dirs_per_shell: int,
    rng: RngStream,
    margin: float = 0.05,
    outer_shells: int = 3,
) -> ContourReport:
    """Shell suprema of ``x/||x|| . grad pi / ||grad pi||``.

    ``pass`` when each of the outer shells stays below ``-margin``, ``fail``
    when one of them reaches 0 or above, ``inconclusive`` otherwise.
    """
    if not margin > 0:
        raise ValueError("margin must be positive")
    radii = _check_radii(radii)
    sups = []
    for r in radii:
        dirs = _directions(t.dim, dirs_per_shell, rng)
        vals = _contour_integrand(dirs, t.gradient_many(r * dirs))
        sups.append(float(np.max(vals)) if np.all(np.isfinite(vals)) else math.nan)
    if not sups or not np.all(np.isfinite(sups)):
        verdict = INCONCLUSIVE
    else:
        outer = sups[-outer_shells:]
        if max(outer) < -margin:
            verdict = PASS
        elif max(outer) >= 0:
            verdict = FAIL
        else:
            verdict = INCONCLUSIVE
    return ContourReport(radii.tolist(), sups, verdict)


def radial_growth_estimate(
    df: DriftFunction,
    R: float,
    probe_radii: Sequence[float],
    n_dirs: int = 64,
    seed: int = 0,
) -> tuple[float, float]:
    """``(gamma, c)`` with ``V(y) >= c exp(gamma ||y||)`` on every probe.

    The radial decay rate ``g = -sup u . grad log pi(x)`` over probes with
    ``||x|| >= R`` gives ``gamma = g / (4R)``; ``c`` is the smaller of
    ``inf_{||x||=R} V`` and ``inf_{||y||<=2R} V(y) e^{-gamma ||y||}``. If the
    bound still fails on a probe, ``gamma`` is halved (up to 30 times).
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    t = df.target
    dirs = _directions(t.dim, n_dirs, RngStream(seed))
    probe_radii = np.asarray(probe_radii, dtype=float).ravel()
    outer = np.concatenate([[R], probe_radii[probe_radii >= R]])
    outer_pts = (outer[:, None, None] * dirs[None]).reshape(-1, t.dim)
    slope = -float(np.max(np.einsum("ni,ni->n", np.tile(dirs, (outer.size, 1)), t.gradient_many(outer_pts))))
    if not slope > 0:
        raise FitFailed("log density does not decay radially beyond R")

    inner_r = np.linspace(0.0, 2 * R, 201)
    inner_pts = (inner_r[:, None, None] * dirs[None]).reshape(-1, t.dim)
    inner_norm = np.repeat(inner_r, dirs.shape[0])
    sphere_logv = df.log_V_many(R * dirs)
    inner_logv = df.log_V_many(inner_pts)
    probe_pts = (probe_radii[:, None, None] * dirs[None]).reshape(-1, t.dim)
    probe_norm = np.linalg.norm(probe_pts, axis=1)
    probe_logv = df.log_V_many(probe_pts)

    gamma = slope / (4.0 * R)
    for _ in range(30):
        log_c = min(float(np.min(sphere_logv)), float(np.min(inner_logv - gamma * inner_norm)))
        if np.all(probe_logv >= log_c + gamma * probe_norm - 1e-12 * np.maximum(1.0, np.abs(probe_logv))):
            return gamma, math.exp(log_c)
        gamma *= 0.5
    raise FitFailed("no positive gamma validates on the probe set")


@dataclass
class ContourCheck:
    M_hat: float
    M_bound: float
    alpha0: float
    radii: list = field(repr=False)


def contour_ratio_check(t: TargetDensity, level: float, n_points: int = 360, seed: int = 0) -> ContourCheck:
    """Trace ``{pi = level}`` by radial bisection and compare its radius spread
    with ``exp(2 pi tan alpha0)``.

    Rays start at the origin, which must lie inside the level set. In 2-d the
    directions are ``n_points`` equally spaced angles; in higher dimensions
    they are drawn from a fixed-seed stream. ``alpha0`` is the largest angle
    between the radius vector and the outward normal over the traced points.
    """
    if t.dim < 2:
        raise ValueError("contour_ratio_check requires d >= 2; in 1-d treat each tail separately")
    if not level > 0:
        raise ValueError("level must be positive")
    target = math.log(level)
    if t.log_density(np.zeros(t.dim)) < target:
        raise ContourNotFound("the origin lies outside the level set")
    if t.dim == 2:
        th = 2 * math.pi * np.arange(n_points) / n_points
        dirs = np.column_stack([np.cos(th), np.sin(th)])
    else:
        dirs = RngStream(seed).spawn_sphere(n_points, t.dim)
    radii = np.empty(n_points)
    for k, u in enumerate(dirs):
        lo, hi = 0.0, 1.0
        for _ in range(1100):
            if t.log_density(hi * u) < target:
                break
            lo, hi = hi, 2 * hi
        else:
            raise ContourNotFound(f"no crossing along direction {u.tolist()}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if t.log_density(mid * u) >= target:
                lo = mid
            else:
                hi = mid
        radii[k] = 0.5 * (lo + hi)
    pts = radii[:, None] * dirs
    cosines = _contour_integrand(dirs, t.gradient_many(pts))
    beta = -float(np.max(cosines))
    M_hat = float(radii.max() / radii.min())
    if beta <= 0:
        return ContourCheck(M_hat, math.inf, math.pi / 2, radii.tolist())
    alpha0 = math.acos(min(beta, 1.0))
    M_bound = math.exp(2 * math.pi * math.tan(alpha0))
    if M_hat > M_bound * (1 + 1e-12):
        raise AssertionError(f"contour radius ratio {M_hat} exceeds the bound {M_bound}")
    return ContourCheck(M_hat, M_bound, alpha0, radii.tolist())
