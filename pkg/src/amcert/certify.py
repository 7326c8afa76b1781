"""Drift and minorization certificates, and explicit convergence bounds.

With ``V = c_V pi^{-1/2}`` the drift fraction of the RWM kernel ``P_v`` is

    tau_v(x) = 1 - P_v V(x) / V(x)
             = int_A (1 - sqrt(pi(x)/pi(y))) q_v(y - x) dy
               - int_R sqrt(pi(y)/pi(x)) (1 - sqrt(pi(y)/pi(x))) q_v(y - x) dy

with ``A = {pi(y) >= pi(x)}`` and ``R`` its complement. Both integrands are
functions of ``lr = log pi(y) - log pi(x)`` only and are evaluated in log
space; the combined integrand lies in ``[-1/4, 1]``.

The certificate fitted from these integrals is an estimate with a reported
error budget, not a proof. :func:`mt_bound` turns a certificate into the
explicit constants ``(L, rho)`` of the computable Meyn-Tweedie type bound
``||P^k(x, .) - pi||_V <= V(x) L rho**k``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate, optimize, special

from .kernel import DiscretizedChain, InvalidState, discretize_rwm
from .linear_core import RngStream, SpdMatrix, as_vector, derive_seed
from .targets import DriftFunction, TargetDensity

__all__ = [
    "QuadratureOverflow",
    "NoDriftFound",
    "GridCoverageError",
    "DriftCertificate",
    "ConvergenceBound",
    "PolynomialRate",
    "Lemma57Report",
    "AuditTable",
    "drift_ratio_tau",
    "fit_drift_certificate",
    "estimate_minorization",
    "det_scaling_audit",
    "mt_bound",
    "certify_discretized",
    "vnorm_distances",
    "vnorm_distance_discretized",
    "polynomial_rate_chain",
    "lemma57_checks",
]

_LOG_MAX = math.log(np.finfo(float).max)
_HALF_WIDTH = 12.0  # integration range in proposal standard deviations


class QuadratureOverflow(ArithmeticError):
    """The density ratio is not representable: ``x`` is too deep in the tail."""


class NoDriftFound(RuntimeError):
    """No radius in the search grid yields a validated drift certificate."""


class GridCoverageError(ValueError):
    """The discretization grid leaves more than 1e-10 of the mass at its ends."""


def _as_spd(v, d: int) -> SpdMatrix:
    if not isinstance(v, SpdMatrix):
        v = SpdMatrix(v)
    if v.dim != d:
        raise ValueError(f"proposal covariance has dimension {v.dim}, target {d}")
    return v


# ---------------------------------------------------------------------------
# certificate types


@dataclass(frozen=True)
class DriftCertificate:
    """``P_v V <= lambda V + b 1_C`` and ``P_v(x, .) >= delta nu`` on ``C``.

    ``C`` is the closed ball of radius ``R`` about the origin and ``nu`` the
    normalized Lebesgue measure on it.
    """

    lambda_: float
    b: float
    R: float
    delta: float
    v: SpdMatrix
    quadrature_budget: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.lambda_ < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        if not self.b > 0 or not self.R > 0:
            raise ValueError("b and R must be positive")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_,
            "b": self.b,
            "R": self.R,
            "delta": self.delta,
            "v": self.v.entries.tolist(),
            "quadrature_budget": self.quadrature_budget,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ConvergenceBound:
    """Constants of ``||P^k(x, .) - pi||_V <= V(x) L rho**k``.

    ``one_minus_rho`` is kept separately because ``rho`` itself rounds to
    1.0 for realistic certificates, while ``1 - rho`` is far from zero.
    """

    gamma: float
    lambda_check: float
    b_check: float
    zeta_bar: float
    M_tilde: float
    vartheta: float
    rho: float
    L: float
    one_minus_rho: float = field(repr=False, default=math.nan)

    _FIELDS = ("gamma", "lambda_check", "b_check", "zeta_bar", "M_tilde", "vartheta", "rho", "L")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self._FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def log_rate(self, k) -> np.ndarray:
        """``log(L rho**k)``, stable when ``rho`` rounds to 1."""
        k = np.asarray(k, dtype=float)
        return math.log(self.L) + k * math.log1p(-self.one_minus_rho)

    def bound(self, k, v_x0: float = 1.0):
        """``V(x0) L rho**k``."""
        return v_x0 * np.exp(self.log_rate(k))


def mt_bound(lam: float, b: float, delta: float, rho: float | None = None) -> ConvergenceBound:
    """Explicit convergence constants from drift ``(lam, b)`` and minorization ``delta``.

    Parameters
    ----------
    lam, b, delta : float
        ``0 <= lam < 1``, ``b > 0`` (the caller asserts ``b >= sup_C V``)
        and ``0 < delta <= 1``.
    rho : float, optional
        Any rate in ``(vartheta, 1)``; defaults to ``(1 + vartheta) / 2``.

    Notes
    -----
    ``M_tilde`` uses ``b_check (1 - lambda_check) + b_check**2`` inside the
    bracket, and ``zeta_bar`` is set equal to its upper bound
    ``(4 - delta**2) / delta**5 * (b / (1 - lam))**2``. ``1 - lambda_check``
    is evaluated as ``(1 - lam) / (1 + gamma)`` and ``rho - vartheta`` as
    ``(1 - vartheta) - (1 - rho)`` to avoid cancellation.
    """
    lam, b, delta = float(lam), float(b), float(delta)
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    if not (b > 0 and math.isfinite(b)):
        raise ValueError("b must be positive and finite")
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    gamma = delta**-2 * (4 * b + 2 * delta * lam * b)
    lambda_check = (lam + gamma) / (1 + gamma)
    one_m_lc = (1 - lam) / (1 + gamma)
    b_check = b + gamma
    zeta_bar = ((4 - delta**2) / delta**5) * (b / (1 - lam)) ** 2
    bracket = one_m_lc + b_check + b_check**2 + zeta_bar * (b_check * one_m_lc + b_check**2)
    M_tilde = bracket / one_m_lc**2
    if not math.isfinite(M_tilde):
        raise OverflowError("M_tilde overflows a double for these inputs")
    one_m_theta = 1.0 / M_tilde
    vartheta = 1.0 - one_m_theta
    if rho is None:
        rho = (1 + vartheta) / 2
        one_m_rho = one_m_theta / 2
    else:
        rho = float(rho)
        one_m_rho = 1.0 - rho
        if not (vartheta < rho < 1.0):
            raise ValueError("rho must lie in (vartheta, 1)")
    L = (1 + gamma) * rho / (one_m_theta - one_m_rho)
    return ConvergenceBound(gamma, lambda_check, b_check, zeta_bar, M_tilde, vartheta, rho, L, one_m_rho)


def exact_bound_fields(lam: float, b: float, delta: float) -> dict:
    """The default-``rho`` fields of :func:`mt_bound` in rational arithmetic.

    Used as a reference: the float results must agree to rounding.
    """
    lam, b, delta = Fraction(lam), Fraction(b), Fraction(delta)
    gamma = (4 * b + 2 * delta * lam * b) / delta**2
    lc = (lam + gamma) / (1 + gamma)
    bc = b + gamma
    zeta = (4 - delta**2) / delta**5 * (b / (1 - lam)) ** 2
    M = (1 - lc + bc + bc**2 + zeta * (bc * (1 - lc) + bc**2)) / (1 - lc) ** 2
    theta = 1 - 1 / M
    rho = (1 + theta) / 2
    L = (1 + gamma) * rho / (rho - theta)
    return dict(gamma=gamma, lambda_check=lc, b_check=bc, zeta_bar=zeta, M_tilde=M, vartheta=theta, rho=rho, L=L)


# ---------------------------------------------------------------------------
# drift fraction


def _integrand(lr: np.ndarray) -> np.ndarray:
    """``1 - e^{-lr/2}`` uphill, ``-(e^{lr/2} - e^{lr})`` downhill."""
    up = lr >= 0
    neg = np.minimum(lr, 0.0)
    return np.where(up, -np.expm1(-0.5 * np.maximum(lr, 0.0)), np.exp(neg) - np.exp(0.5 * neg))


def _log_ratios(t: TargetDensity, x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    lpx = t.log_density(x)
    if not math.isfinite(lpx):
        raise InvalidState("pi(x) = 0 at the evaluation point")
    lr = t.log_density_many(ys) - lpx
    if np.any(np.isnan(lr)) or np.any(lr > 2 * _LOG_MAX):
        raise QuadratureOverflow("density ratio overflows on the integration grid")
    return lr


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def drift_ratio_tau(
    t: TargetDensity,
    v,
    x,
    method: str = "quadrature",
    *,
    n: int = 20_000,
    rng: RngStream | None = None,
    n_grid: int | None = None,
) -> tuple[float, float]:
    """Drift fraction ``tau_v(x) = 1 - P_v V(x) / V(x)`` and an error estimate.

    Parameters
    ----------
    method : {"quadrature", "monte_carlo"}
        Quadrature integrates over ``x + L z`` with ``z`` in ``[-12, 12]^d``
        (composite trapezoid; tensor grid in 2-d) and estimates the error
        by comparing with the half-resolution rule. Monte Carlo draws ``n``
        proposals from ``rng`` and reports the standard error.
    n_grid : int, optional
        Odd number of nodes per axis; defaults to 8001 in 1-d and 401 in 2-d.
    """
    x = as_vector(x, t.dim)
    v = _as_spd(v, t.dim)
    d = t.dim
    if method == "monte_carlo":
        if rng is None:
            raise ValueError("monte_carlo needs an rng")
        if n < 2:
            raise ValueError("monte_carlo needs n >= 2")
        z = rng.normals(n * d).reshape(n, d)
        g = _integrand(_log_ratios(t, x, x + z @ v.chol.T))
        return float(np.mean(g)), float(np.std(g, ddof=1) / math.sqrt(n))
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if d > 2:
        raise ValueError("quadrature is available for d <= 2 only; use monte_carlo")
    m = n_grid or (8001 if d == 1 else 401)
    if m < 5 or m % 2 == 0:
        raise ValueError("n_grid must be odd and at least 5")
    z = np.linspace(-_HALF_WIDTH, _HALF_WIDTH, m)
    h = z[1] - z[0]
    phi = np.exp(-0.5 * z**2) / math.sqrt(2 * math.pi)
    w_fine = _trapezoid_weights(m, h) * phi
    w_coarse = np.zeros(m)
    w_coarse[::2] = _trapezoid_weights((m + 1) // 2, 2 * h) * phi[::2]
    # mass outside [-12, 12] per axis, where |integrand| <= 1
    tail = d * 2.0 * special.ndtr(-_HALF_WIDTH)
    if d == 1:
        g = _integrand(_log_ratios(t, x, (x[0] + v.chol[0, 0] * z)[:, None]))
        fine, coarse = g @ w_fine, g @ w_coarse
    else:
        zz = np.stack(np.meshgrid(z, z, indexing="ij"), axis=-1).reshape(-1, 2)
        g = _integrand(_log_ratios(t, x, x + zz @ v.chol.T)).reshape(m, m)
        fine = w_fine @ g @ w_fine
        coarse = w_coarse @ g @ w_coarse
    return float(fine), float(abs(fine - coarse) + tail)


# ---------------------------------------------------------------------------
# fitting


def _probe_directions(d: int, n_dirs: int, seed: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = 2 * math.pi * np.arange(n_dirs) / n_dirs
        return np.column_stack([np.cos(a), np.sin(a)])
    return RngStream(seed).spawn_sphere(n_dirs, d)


def _ball_sup_V(df: DriftFunction, R: float, seed: int) -> float:
    d = df.target.dim
    if d == 1:
        pts = np.linspace(-R, R, 4001)[:, None]
    elif d == 2:
        r = np.linspace(0, R, 201)
        a = 2 * math.pi * np.arange(720) / 720
        pts = (r[:, None, None] * np.stack([np.cos(a), np.sin(a)], axis=-1)[None]).reshape(-1, 2)
    else:
        rng = RngStream(seed)
        dirs = rng.spawn_sphere(20_000, d)
        pts = np.vstack([dirs * R, dirs * R * rng.uniforms(20_000)[:, None] ** (1.0 / d)])
    return float(np.max(df.V_many(pts)))


def fit_drift_certificate(
    t: TargetDensity,
    v,
    search,
    margin: float = 0.05,
    *,
    method: str | None = None,
    n_radii: int = 60,
    n_dirs: int = 16,
    probe_outer: float | None = None,
    n_holdout: int = 200,
    n_mc: int = 20_000,
    seed: int = 0,
) -> DriftCertificate:
    """Fit ``(lambda, b, R, delta)`` for the RWM kernel with proposal ``N(0, v)``.

    The smallest ``R`` in ``search`` is chosen for which every probe with
    ``||x|| >= R`` (radii up to ``probe_outer``, default ``4 max(search)``)
    has ``tau - err >= margin``; then ``lambda = 1 - margin``,
    ``b = max(sup_C P_v V, sup_C V)`` over a ball grid, and the inequality
    ``P_v V <= lambda V + b 1_C`` is re-checked on ``n_holdout`` fresh
    random points. A failed holdout moves on to the next radius.

    Raises
    ------
    NoDriftFound
        If no radius in ``search`` survives, as for heavy-tailed targets.
    """
    margin = float(margin)
    if not 0.0 < margin < 1.0:
        raise ValueError("margin must lie in (0, 1): lambda = 1 - margin needs slack below 1")
    search = np.sort(np.asarray(search, dtype=float).ravel())
    if search.size == 0 or search[0] <= 0:
        raise ValueError("search radii must be positive")
    v = _as_spd(v, t.dim)
    d = t.dim
    method = method or ("quadrature" if d <= 2 else "monte_carlo")
    df = DriftFunction.for_target(t)
    outer = float(probe_outer) if probe_outer is not None else 4.0 * float(search[-1])
    if outer < search[-1]:
        raise ValueError("probe_outer must cover the search grid")

    mc_rng = RngStream(derive_seed(seed, 2))

    def tau_at(pts):
        out = np.empty((len(pts), 2))
        for i, p in enumerate(pts):
            out[i] = drift_ratio_tau(t, v, p, method, n=n_mc, rng=mc_rng)
        return out

    radii = np.unique(np.concatenate([search, np.linspace(0.0, outer, n_radii)]))
    dirs = _probe_directions(d, n_dirs, derive_seed(seed, 0))
    probes = (radii[:, None, None] * dirs[None]).reshape(-1, d)
    probes = np.unique(np.round(probes, 14), axis=0)
    norms = np.linalg.norm(probes, axis=1)
    te = tau_at(probes)
    lower = te[:, 0] - te[:, 1]
    V = df.V_many(probes)
    pv_upper = V * (1.0 - te[:, 0] + te[:, 1])

    # holdout: radius uniform on [0, outer], direction uniform
    hrng = RngStream(derive_seed(seed, 1))
    hold = hrng.uniforms(n_holdout)[:, None] * outer * (
        np.where(hrng.uniforms(n_holdout) < 0.5, -1.0, 1.0)[:, None] if d == 1 else hrng.spawn_sphere(n_holdout, d)
    )
    hold_te = tau_at(hold)
    hold_norm = np.linalg.norm(hold, axis=1)
    hold_V = df.V_many(hold)
    lam = 1.0 - margin

    tried = []
    for R in search:
        outside = norms >= R - 1e-12
        tau_min = float(np.min(lower[outside]))
        tried.append((float(R), tau_min))
        if tau_min < margin:
            continue
        inside = ~outside
        b = max(float(np.max(pv_upper[inside])) if inside.any() else 0.0, _ball_sup_V(df, R, derive_seed(seed, 3)))
        lhs = hold_V * (1.0 - hold_te[:, 0])
        rhs = lam * hold_V + b * (hold_norm <= R) + hold_V * hold_te[:, 1]
        if not np.all(lhs <= rhs):
            continue
        budget = {
            "method": method,
            "grid_points_per_axis": 8001 if (method == "quadrature" and d == 1) else (401 if method == "quadrature" else None),
            "mc_samples": n_mc if method == "monte_carlo" else None,
            "n_probes": int(len(probes)),
            "n_holdout": int(n_holdout),
            "probe_outer": outer,
            "max_err": float(max(np.max(te[:, 1]), np.max(hold_te[:, 1]))),
            "tau_min_outside": tau_min,
        }
        delta = estimate_minorization(t, v, float(R))
        return DriftCertificate(lam, b, float(R), delta, v, budget)
    raise NoDriftFound(
        "no radius gives tau - err >= margin outside C; min tau per radius: "
        + ", ".join(f"R={r:g}: {m:.4g}" for r, m in tried)
    )


def _log_ball_volume(d: int, R: float) -> float:
    return 0.5 * d * math.log(math.pi) - special.gammaln(0.5 * d + 1) + d * math.log(R)


def _log_inf_on_ball(t: TargetDensity, R: float) -> float:
    d = t.dim
    if d == 1:
        pts = np.linspace(-R, R, 4001)[:, None]
    elif d == 2:
        a = 2 * math.pi * np.arange(1440) / 1440
        r = np.linspace(0, R, 101)
        pts = (r[:, None, None] * np.stack([np.cos(a), np.sin(a)], axis=-1)[None]).reshape(-1, 2)
    else:
        rng = RngStream(17)
        dirs = rng.spawn_sphere(20_000, d)
        pts = np.vstack([dirs * R, dirs * R * rng.uniforms(20_000)[:, None] ** (1.0 / d)])
    return float(np.min(t.log_density_many(pts)))


def estimate_minorization(t: TargetDensity, v, R: float) -> float:
    """Minorization constant of ``P_v`` on the ball ``C`` of radius ``R``.

    ``delta = |C| (2 pi)^{-d/2} det(v)^{-1/2} exp(-diam(C)^2 / (2 kappa'))
    inf_C pi / sup pi`` with ``kappa'`` the certified eigenvalue floor of
    ``v``, computed in log space and clamped to ``(0, 1]``. ``inf_C pi`` is
    a grid minimum.
    """
    v = _as_spd(v, t.dim)
    R = float(R)
    if not R > 0:
        raise ValueError("R must be positive")
    kappa = v.certified_floor
    if not kappa > 0:
        raise ValueError("v needs a positive certified eigenvalue floor")
    d = t.dim
    log_delta = (
        _log_ball_volume(d, R)
        - 0.5 * d * math.log(2 * math.pi)
        - 0.5 * v.logdet()
        - (2 * R) ** 2 / (2 * kappa)
        + _log_inf_on_ball(t, R)
        - t.log_sup
    )
    if log_delta >= 0:
        return 1.0
    return max(math.exp(log_delta), np.nextafter(0.0, 1.0))


@dataclass
class AuditTable:
    rows: list
    c_max: float
    c_min: float
    passed: bool

    def to_csv(self) -> str:
        lines = ["det_sqrt,lambda,delta,R,ratio"]
        lines += [f"{r['det_sqrt']!r},{r['lambda']!r},{r['delta']!r},{r['R']!r},{r['ratio']!r}" for r in self.rows]
        return "\n".join(lines) + "\n"


def det_scaling_audit(t: TargetDensity, vs, kappa: float, search, margin: float = 0.05, **fit_kw) -> AuditTable:
    """``((1 - lambda_v)^{-1} max delta_v^{-1}) / det(v)^{1/2}`` across a family.

    Every ``v`` must have all eigenvalues at least ``kappa``.
    """
    mats = [_as_spd(v, t.dim) for v in vs]
    if not mats:
        raise ValueError("empty family")
    for m in mats:
        if m.min_eigenvalue() < kappa:
            raise ValueError(f"proposal covariance has an eigenvalue below kappa = {kappa}")
    rows = []
    for m in mats:
        cert = fit_drift_certificate(t, m, search, margin, **fit_kw)
        det_sqrt = math.exp(0.5 * m.logdet())
        worst = max(1.0 / (1.0 - cert.lambda_), 1.0 / cert.delta)
        rows.append(dict(det_sqrt=det_sqrt, **{"lambda": cert.lambda_}, delta=cert.delta, R=cert.R, ratio=worst / det_sqrt))
    ratios = [r["ratio"] for r in rows]
    c_max, c_min = max(ratios), min(ratios)
    return AuditTable(rows, c_max, c_min, bool(math.isfinite(c_max) and c_min > 0))


# ---------------------------------------------------------------------------
# discretized chain


def certify_discretized(chain: DiscretizedChain, t: TargetDensity, search, margin: float = 0.05) -> DriftCertificate:
    """Exact drift/minorization certificate for a 1-d discretized chain.

    ``P V`` is a matrix-vector product, so ``tau`` is exact at every node
    and the check covers the whole state space. The minorization measure
    is uniform on the nodes of ``C``; ``delta`` is the formula value with
    ``|C| = (number of nodes) h``, lowered if needed to the smallest
    ``N_C P[i, j]`` over ``i, j`` in ``C``.
    """
    if not 0.0 < margin < 1.0:
        raise ValueError("margin must lie in (0, 1)")
    df = DriftFunction.for_target(t)
    x = chain.grid
    V = df.V_many(x[:, None])
    PV = chain.P @ V
    tau = 1.0 - PV / V
    lam = 1.0 - margin
    lp = t.log_density_many(x[:, None])
    for R in np.sort(np.asarray(search, dtype=float)):
        inC = np.abs(x) <= R
        if not inC.any() or np.any(tau[~inC] < margin):
            continue
        b = float(max(np.max(PV[inC]), np.max(V[inC])))
        n_c = int(inC.sum())
        xc = x[inC]
        diam = float(xc[-1] - xc[0])
        log_formula = (
            math.log(n_c * chain.h)
            - 0.5 * math.log(2 * math.pi * chain.v)
            - diam**2 / (2 * chain.v)
            + float(np.min(lp[inC]))
            - float(np.max(lp))
        )
        exact = n_c * float(np.min(chain.P[np.ix_(inC, inC)]))
        delta = min(1.0, math.exp(log_formula), exact)
        budget = {"method": "exact_matrix", "grid_points": int(x.size), "max_err": 0.0, "tau_min_outside": float(np.min(tau[~inC])) if (~inC).any() else None}
        return DriftCertificate(lam, b, float(R), delta, SpdMatrix([[chain.v]]), budget)
    raise NoDriftFound("no radius certifies the discretized chain")


def _check_coverage(chain: DiscretizedChain) -> None:
    if chain.pi[0] > 1e-10 or chain.pi[-1] > 1e-10:
        raise GridCoverageError("boundary mass of the discretized target exceeds 1e-10")


def vnorm_distances(chain: DiscretizedChain, t: TargetDensity, x0: float, ks) -> np.ndarray:
    """``sum_i V_i |P^k(x0, i) - pi_i|`` for each ``k`` in ``ks``.

    ``x0`` is snapped to the nearest grid node.
    """
    _check_coverage(chain)
    ks = np.asarray(ks, dtype=int)
    if ks.size and ks.min() < 0:
        raise ValueError("k must be non-negative")
    V = DriftFunction.for_target(t).V_many(chain.grid[:, None])
    i0 = int(np.argmin(np.abs(chain.grid - float(np.asarray(x0).reshape(-1)[0]))))
    mu = np.zeros(chain.grid.size)
    mu[i0] = 1.0
    out = np.empty(ks.size)
    order = np.argsort(ks)
    k_now = 0
    for idx in order:
        while k_now < ks[idx]:
            mu = mu @ chain.P
            k_now += 1
        out[idx] = float(np.sum(V * np.abs(mu - chain.pi)))
    return out


def vnorm_distance_discretized(t: TargetDensity, v, x0, k: int, grid) -> float:
    """V-weighted total variation between ``P^k(x0, .)`` and ``pi`` on a 1-d grid."""
    if t.dim != 1:
        raise ValueError("discretized distances are implemented for d = 1 only")
    v = _as_spd(v, 1)
    chain = discretize_rwm(t, float(v.entries[0, 0]), grid)
    return float(vnorm_distances(chain, t, x0, [k])[0])


# ---------------------------------------------------------------------------
# polynomial constants


@dataclass(frozen=True)
class PolynomialRate:
    """Constants ``(L_n, rho_n)`` at step ``n`` and the a1..a7 audit."""

    c: float
    eps: float
    r: float
    n: int
    lambda_tilde: float
    b_tilde: float
    delta: float
    bound: ConvergenceBound
    c_tilde: float
    a: dict
    inv_one_minus_rho: float
    audit_rate: bool
    audit_L: bool

    @property
    def L_n(self) -> float:
        return self.bound.L

    @property
    def rho_n(self) -> float:
        return self.bound.rho

    @property
    def passed(self) -> bool:
        return self.audit_rate and self.audit_L


def _a_constants(c: float, r: float) -> tuple[float, dict]:
    c_tilde = max(c / r, (2 * c) ** r, 1.0)
    a1 = 6 * c**2 * c_tilde
    a2 = c_tilde + a1
    a3 = c_tilde * (1 + a1)
    a4 = 4 * c**5 * c_tilde**4
    a5 = 5 * a3**2 * a4 * a2**2
    a6 = 2 * a5
    a7 = (1 + a1) * a6
    return c_tilde, dict(a1=a1, a2=a2, a3=a3, a4=a4, a5=a5, a6=a6, a7=a7)


def polynomial_rate_chain(c: float, eps: float, r: float, n: int) -> PolynomialRate:
    """Evaluate the drift/minorization chain with polynomially degrading constants.

    ``lambda~_n = 1 - r c^{-1} n^{-eps}``, ``b~_n = (2 c n^eps)^r`` and
    ``delta_n = c^{-1} n^{-eps}`` are fed to :func:`mt_bound`; the result is
    audited against ``(1 - rho_n)^{-1} <= a6 n^{23 eps}`` and
    ``L_n <= a7 n^{26 eps}``.
    """
    c, eps, r = float(c), float(eps), float(r)
    if c < 1:
        raise ValueError("c must be >= 1")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if not 0 < r <= 1:
        raise ValueError("r must lie in (0, 1]")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    ne = float(n) ** eps
    lam_t = 1.0 - r / (c * ne)
    b_t = (2 * c * ne) ** r
    delta = 1.0 / (c * ne)
    bound = mt_bound(lam_t, b_t, delta)
    c_tilde, a = _a_constants(c, r)
    inv_gap = 1.0 / bound.one_minus_rho
    return PolynomialRate(
        c, eps, r, n, lam_t, b_t, delta, bound, c_tilde, a, inv_gap,
        bool(inv_gap <= a["a6"] * float(n) ** (23 * eps)),
        bool(bound.L <= a["a7"] * float(n) ** (26 * eps)),
    )


# ---------------------------------------------------------------------------
# the f(x) = x exp(-x^2/2) inequalities


@dataclass(frozen=True)
class Lemma57Report:
    eps: float
    c: float
    grid_min_margin: float
    grid_ok: bool
    negative_part_integral: float
    negative_part_bound: float
    integral_ok: bool

    @property
    def passed(self) -> bool:
        return self.grid_ok and self.integral_ok


def _f(x):
    return x * np.exp(-0.5 * np.asarray(x) ** 2)


def lemma57_checks(eps: float) -> Lemma57Report:
    """Check ``2 f(x+eps) - f(x) >= x/8`` on ``(0, 1/2]`` and the negative-part bound.

    With ``f(x) = x exp(-x^2/2)``, the integral over ``(0, inf)`` of the
    negative part of ``2 f(x + eps) - f(x)`` must be at least
    ``-exp(-eps^{-2} c)`` with ``c = 1/32``.
    """
    eps = float(eps)
    if not 0 < eps < 0.125:
        raise ValueError("eps must lie in (0, 1/8)")
    c = 1.0 / 32.0
    x = np.arange(1, 5001) * 1e-4  # (0, 1/2] with step 1e-4
    margin = 2 * _f(x + eps) - _f(x) - x / 8
    grid_min = float(np.min(margin))

    # 2 f(x+eps) - f(x) changes sign once, where
    # log 2 + log(1 + eps/x) = eps x + eps^2/2
    def s(u):
        return math.log(2) + math.log1p(eps / u) - eps * u - 0.5 * eps**2

    root = optimize.brentq(s, 1e-12, 10.0 / eps)

    def h(u):
        return 2 * _f(u + eps) - _f(u)

    neg, _ = integrate.quad(h, root, np.inf, limit=200, epsabs=1e-300, epsrel=1e-10)
    neg = min(0.0, float(neg))
    bound = -math.exp(-c / eps**2)
    return Lemma57Report(eps, c, grid_min, grid_min >= 0.0, neg, bound, neg >= bound)
