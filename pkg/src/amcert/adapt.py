"""Adaptive Metropolis: covariance recursion, constrained adaptation, chain driver.

The adaptation parameter is the pair ``s = (mean, cov)`` with norm
``|s| = max(||mean||_2, ||cov||_F)``. One AM iteration is

    X_{n+1} ~ P_{theta * Sigma_n}(X_n, .)
    S_{n+1} = sigma_{n+1}(S_n, eta_{n+1} H(S_n, X_{n+1}))

where ``sigma_n`` keeps the increment only if the result stays in
``K_n = {s : |s| <= t * n**eps_prime}``. Three covariance recursions are
available:

``modified``
    ``Sigma_k = k/(k+1) Sigma_{k-1} + 1/(k+1) [d d^T + kappa I]`` with
    ``d = X_k - mean_{k-1}``; for ``weight_exponent != 1`` the weights
    become ``1 - eta_k`` and ``eta_k = (k+1)**-weight_exponent``.
``original``
    the unbiased estimator, ``Sigma_k = Cov(X_0..X_k) + kappa I``, updated
    as ``(k-1)/k (Sigma_{k-1} - kappa I) + d d^T/(k+1) + kappa I``.
``original_printed``
    ``(k-1)/k Sigma_{k-1} + 1/(k+1) [d d^T + kappa I]``, the unbiased form
    with the regularizer weighted like the other terms. It drifts from
    ``Cov + kappa I`` by ``O(kappa / k)`` and exists for the comparison
    with ``modified``.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import InvalidState, rwm_step
from .linear_core import RngStream, SpdMatrix, as_vector
from .targets import TargetDensity

__all__ = [
    "VARIANTS",
    "OverflowHalt",
    "AdaptationState",
    "AmConfig",
    "ConstraintSchedule",
    "ChainTrace",
    "adaptation_H",
    "am_update",
    "constrain_step",
    "run_am_chain",
    "growth_monitor",
    "coupled_eps_prime",
]

VARIANTS = ("modified", "original", "original_printed")
_LOG_MAX = math.log(np.finfo(float).max)


class OverflowHalt(RuntimeError):
    """The chain reached a state where V(x) overflows a double."""


def _fro(a: np.ndarray) -> float:
    return math.sqrt(float(np.sum(a * a)))


@dataclass(frozen=True)
class AdaptationState:
    mean: np.ndarray
    cov: SpdMatrix
    n: int = 0

    @property
    def norm(self) -> float:
        return max(_fro(self.mean), _fro(self.cov.entries))

    def __eq__(self, other):
        if not isinstance(other, AdaptationState):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.mean, other.mean) and self.cov == other.cov


@dataclass(frozen=True)
class AmConfig:
    theta: float | None = None  # None: 2.38**2 / d
    kappa: float = 0.01
    weight_exponent: float = 1.0
    recursion_variant: str = "modified"
    burn_in: int = 0

    def __post_init__(self):
        if self.theta is not None and not self.theta > 0:
            raise ValueError("theta must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.weight_exponent > 0:
            raise ValueError("weight_exponent must be positive")
        if self.recursion_variant not in VARIANTS:
            raise ValueError(f"recursion_variant must be one of {VARIANTS}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")

    def theta_for(self, d: int) -> float:
        return 2.38**2 / d if self.theta is None else float(self.theta)


@dataclass(frozen=True)
class ConstraintSchedule:
    t: float = 1e6
    eps_prime: float = 0.05
    enabled: bool = False

    def __post_init__(self):
        if not self.t >= 1:
            raise ValueError("t must be >= 1")
        if not self.eps_prime > 0:
            raise ValueError("eps_prime must be positive")

    def bound(self, n: int) -> float:
        return self.t * n**self.eps_prime


def coupled_eps_prime(eps: float, d: int) -> float:
    """``eps / (2 d)``, the coupling used in the ergodicity proof."""
    return eps / (2 * d)


def adaptation_H(s: AdaptationState, x, kappa: float):
    """``(x - m, (x - m)(x - m)^T - cov + kappa I)``."""
    x = as_vector(x, s.mean.size)
    dev = x - s.mean
    return dev, np.outer(dev, dev) - s.cov.entries + kappa * np.eye(x.size)


def _updated(mean, cov, x, k, cfg: AmConfig):
    """Mean and covariance after absorbing ``X_k``; shared by both engines' semantics."""
    d = x.size
    dev = x - mean
    if cfg.recursion_variant == "modified":
        if cfg.weight_exponent == 1.0:
            w_old, w_new = k / (k + 1.0), 1.0 / (k + 1.0)
        else:
            w_new = (k + 1.0) ** (-cfg.weight_exponent)
            w_old = 1.0 - w_new
        new_mean = w_old * mean + w_new * x
        dd = np.outer(dev, dev)
        dd.flat[:: d + 1] += cfg.kappa
        return new_mean, w_old * cov + w_new * dd
    new_mean = (k / (k + 1.0)) * mean + (1.0 / (k + 1.0)) * x
    a, bw = (k - 1.0) / k, 1.0 / (k + 1.0)
    if cfg.recursion_variant == "original":
        kI = cfg.kappa * np.eye(d)
        new_cov = a * (cov - kI) + bw * np.outer(dev, dev) + kI
    else:
        new_cov = a * cov + bw * (np.outer(dev, dev) + cfg.kappa * np.eye(d))
    return new_mean, new_cov


def am_update(state: AdaptationState, x_new, cfg: AmConfig) -> AdaptationState:
    """Absorb ``x_new`` as ``X_{n+1}`` where ``n = state.n``."""
    x = as_vector(x_new, state.mean.size)
    k = state.n + 1
    mean, cov = _updated(state.mean, state.cov.entries, x, k, cfg)
    floor = None if cfg.recursion_variant == "original_printed" else cfg.kappa
    return AdaptationState(mean, SpdMatrix(cov, certified_floor=floor), k)


def _admissible(norm: float, n: int, sched: ConstraintSchedule) -> bool:
    return norm <= sched.bound(n)


def constrain_step(s: AdaptationState, increment, n: int, sched: ConstraintSchedule):
    """``sigma_n``: apply ``increment`` if ``s + increment`` lies in ``K_n``.

    Returns ``(state, applied)``. Both branches stamp the result with time
    index ``n``; a rejected increment leaves mean and covariance untouched.
    With the schedule disabled every increment is applied.
    """
    dm, dv = increment
    mean = s.mean + np.asarray(dm, dtype=float)
    cov = s.cov.entries + np.asarray(dv, dtype=float)
    if sched.enabled and not _admissible(max(_fro(mean), _fro(cov)), n, sched):
        return AdaptationState(s.mean, s.cov, n), False
    return AdaptationState(mean, SpdMatrix(cov), n), True


@dataclass
class ChainTrace:
    """Everything a run produced. Row ``k`` of the arrays belongs to ``X_k``.

    ``accepted`` and ``hit_mask`` have ``n_steps`` entries (step ``k`` at
    index ``k - 1``); ``constraint_hits`` lists the steps ``k`` at which
    ``sigma_k`` rejected the increment.
    """

    states: np.ndarray
    accepted: np.ndarray
    mean_norms: np.ndarray
    cov_norms: np.ndarray
    hit_mask: np.ndarray
    snapshots: list
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.accepted.size

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def constraint_hits(self) -> list:
        return (np.flatnonzero(self.hit_mask) + 1).tolist()

    @property
    def s_norms(self) -> np.ndarray:
        return np.maximum(self.mean_norms, self.cov_norms)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else math.nan

    def csv_bytes(self) -> bytes:
        """Trace CSV: ``step, x0..x{d-1}, accepted, s_norm, constraint_hit``.

        Floats use ``%.17g``, which round-trips every double.
        """
        d = self.dim
        head = ",".join(["step"] + [f"x{i}" for i in range(d)] + ["accepted", "s_norm", "constraint_hit"])
        acc = np.concatenate([[0], self.accepted.astype(int)])
        hit = np.concatenate([[0], self.hit_mask.astype(int)])
        s = self.s_norms
        fmt = ",".join(["%d"] + ["%.17g"] * d + ["%d", "%.17g", "%d"])
        rows = [
            fmt % (k, *self.states[k].tolist(), acc[k], s[k], hit[k]) for k in range(self.states.shape[0])
        ]
        return ("\n".join([head] + rows) + "\n").encode("ascii")

    def csv_sha256(self) -> str:
        return hashlib.sha256(self.csv_bytes()).hexdigest()

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "n_steps": self.n_steps,
            "dim": self.dim,
            "acceptance_rate": self.acceptance_rate,
            "constraint_hits": self.constraint_hits,
            "mean_norms": self.mean_norms.tolist(),
            "cov_norms": self.cov_norms.tolist(),
            "snapshots": [
                {"n": s.n, "mean": s.mean.tolist(), "cov": s.cov.entries.tolist()} for s in self.snapshots
            ],
        }

    def write(self, csv_path, json_path) -> str:
        data = self.csv_bytes()
        with open(csv_path, "wb") as fh:
            fh.write(data)
        side = self.sidecar()
        side["csv_sha256"] = hashlib.sha256(data).hexdigest()
        with open(json_path, "w") as fh:
            json.dump(side, fh)
        return side["csv_sha256"]

    @classmethod
    def read(cls, csv_path, json_path) -> "ChainTrace":
        with open(json_path) as fh:
            side = json.load(fh)
        with open(csv_path, "rb") as fh:
            raw = fh.read()
        arr = np.loadtxt(io.BytesIO(raw), delimiter=",", skiprows=1, ndmin=2)
        d = side["dim"]
        snaps = [
            AdaptationState(np.array(s["mean"]), SpdMatrix(s["cov"]), int(s["n"])) for s in side["snapshots"]
        ]
        return cls(
            states=arr[:, 1 : 1 + d].copy(),
            accepted=arr[1:, 1 + d].astype(bool),
            mean_norms=np.array(side["mean_norms"]),
            cov_norms=np.array(side["cov_norms"]),
            hit_mask=arr[1:, 3 + d].astype(bool),
            snapshots=snaps,
            seed=int(side["seed"]),
            config=side.get("config", {}),
        )


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def run_am_chain(
    cfg: AmConfig,
    sched: ConstraintSchedule,
    t: TargetDensity,
    x0,
    sigma0,
    n_steps: int,
    seed: int,
    *,
    snapshot_every: int = 100,
    engine: str = "auto",
) -> ChainTrace:
    """Run an AM chain of ``n_steps`` transitions from ``x0``.

    During burn-in (steps producing ``X_1 .. X_{burn_in + 1}``) the proposal
    covariance is ``theta * sigma0``; the running moments still absorb every
    state. ``engine`` selects the compiled loop (``"numba"``, built-in targets
    only), the reference loop (``"python"``) or the former when possible
    (``"auto"``). Each engine is deterministic in ``seed``.
    """
    x0 = as_vector(x0, t.dim)
    if not isinstance(sigma0, SpdMatrix):
        sigma0 = SpdMatrix(sigma0)
    if sigma0.dim != t.dim:
        raise ValueError("sigma0 dimension differs from the target")
    if sigma0.min_eigenvalue() < cfg.kappa * (1 - 1e-12):
        raise ValueError("sigma0 must satisfy sigma0 >= kappa I")
    if n_steps < 0 or snapshot_every < 1:
        raise ValueError("n_steps must be >= 0 and snapshot_every >= 1")
    lp_floor = t.log_sup - 2 * _LOG_MAX
    echo = {
        "am": {
            "theta": cfg.theta_for(t.dim),
            "kappa": cfg.kappa,
            "weight_exponent": cfg.weight_exponent,
            "recursion_variant": cfg.recursion_variant,
            "burn_in": cfg.burn_in,
        },
        "constraint": {"t": sched.t, "eps_prime": sched.eps_prime, "enabled": sched.enabled},
        "target": t.spec(),
    }
    if engine not in ("auto", "numba", "python"):
        raise ValueError("engine must be auto, numba or python")
    use_numba = engine == "numba" or (engine == "auto" and t.jit_params is not None and _numba_available())
    if use_numba:
        if t.jit_params is None:
            raise ValueError("the numba engine needs a built-in target")
        trace = _run_numba(cfg, sched, t, x0, sigma0, n_steps, seed, snapshot_every, lp_floor)
    else:
        trace = _run_python(cfg, sched, t, x0, sigma0, n_steps, seed, snapshot_every, lp_floor)
    trace.config = dict(echo, engine="numba" if use_numba else "python")
    return trace


def _run_python(cfg, sched, t, x0, sigma0, n_steps, seed, snapshot_every, lp_floor) -> ChainTrace:
    rng = RngStream(seed)
    d = t.dim
    theta = cfg.theta_for(d)
    states = np.empty((n_steps + 1, d))
    accepted = np.zeros(n_steps, dtype=bool)
    hits = np.zeros(n_steps, dtype=bool)
    mean_norms = np.empty(n_steps + 1)
    cov_norms = np.empty(n_steps + 1)

    x = x0.copy()
    lpx = t.log_density(x)
    if not math.isfinite(lpx):
        raise InvalidState("pi(x0) = 0")
    mean, cov = x0.copy(), sigma0.entries.copy()
    states[0] = x
    mean_norms[0], cov_norms[0] = _fro(mean), _fro(cov)
    snaps = [AdaptationState(mean.copy(), SpdMatrix(cov), 0)]
    fixed = sigma0.entries * theta

    for n in range(n_steps):
        prop = fixed if n <= cfg.burn_in else theta * cov
        step = rwm_step(x, t, SpdMatrix(prop), rng, log_px=lpx)
        if step.accepted:
            x = step.next_state
            lpx = t.log_density(x)  # same value the compiled loop carries
            accepted[n] = True
            if lpx < lp_floor:
                raise OverflowHalt(f"V(X_{n + 1}) overflows")
        states[n + 1] = x
        k = n + 1
        new_mean, new_cov = _updated(mean, cov, x, k, cfg)
        mn, cn = _fro(new_mean), _fro(new_cov)
        if sched.enabled and not _admissible(max(mn, cn), k, sched):
            hits[n] = True
            mean_norms[k], cov_norms[k] = mean_norms[n], cov_norms[n]
        else:
            mean, cov = new_mean, new_cov
            mean_norms[k], cov_norms[k] = mn, cn
        if k % snapshot_every == 0 or k == n_steps:
            snaps.append(AdaptationState(mean.copy(), SpdMatrix(cov), k))
    return ChainTrace(states, accepted, mean_norms, cov_norms, hits, snaps, int(seed))


def _run_numba(cfg, sched, t, x0, sigma0, n_steps, seed, snapshot_every, lp_floor) -> ChainTrace:
    from . import _jit

    rng = RngStream(seed)
    d = t.dim
    # same draws, in the same per-substream order, as n_steps calls of rwm_step
    normals = rng.normals(n_steps * d)
    uniforms = rng.uniforms(n_steps)
    variant = {"modified": _jit.MODIFIED, "original": _jit.ORIGINAL, "original_printed": _jit.ORIGINAL_PRINTED}[
        cfg.recursion_variant
    ]
    status, done, states, accepted, hits, mnorm, cnorm, sn, sm, sc = _jit.am_loop(
        *_jit.pack(t.jit_params[0], d, *t.jit_params[1:]),
        x0.astype(float),
        x0.astype(float),
        np.array(sigma0.entries),
        np.array(sigma0.entries),
        float(cfg.theta_for(d)),
        float(cfg.kappa),
        float(cfg.weight_exponent),
        variant,
        int(cfg.burn_in),
        bool(sched.enabled),
        float(sched.t),
        float(sched.eps_prime),
        normals,
        uniforms,
        int(snapshot_every),
        float(lp_floor),
    )
    if status == _jit.BAD_START:
        raise InvalidState("pi(x0) = 0")
    if status == _jit.NOT_PD:
        from .linear_core import NotPositiveDefinite

        raise NotPositiveDefinite(f"proposal covariance lost positive definiteness at step {done + 1}")
    if status == _jit.OVERFLOW:
        raise OverflowHalt(f"V(X_{done}) overflows")
    snaps = [AdaptationState(sm[i].copy(), SpdMatrix(sc[i]), int(sn[i])) for i in range(sn.size)]
    return ChainTrace(states, accepted, mnorm, cnorm, hits, snaps, int(seed))


def growth_monitor(trace: ChainTrace, eps: float):
    """``(A_state, A_mean, A_cov)``: ``max_{n>=1} ||.|| / n**eps`` for the state,
    the running mean and the running covariance (Frobenius)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if trace.n_steps < 1:
        return 0.0, 0.0, 0.0
    n = np.arange(1, trace.n_steps + 1, dtype=float)
    scale = n**eps
    a_state = float(np.max(np.linalg.norm(trace.states[1:], axis=1) / scale))
    a_mean = float(np.max(trace.mean_norms[1:] / scale))
    a_cov = float(np.max(trace.cov_norms[1:] / scale))
    return a_state, a_mean, a_cov
