"""Random-walk Metropolis with a Gaussian proposal.

One step consumes exactly one Gaussian vector (normal substream) and one
uniform (uniform substream) of the chain's :class:`RngStream`, whether or
not the proposal is uphill. Acceptance compares ``log u`` with the
log-density difference, so nothing underflows in super-exponential tails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linear_core import SpdMatrix, RngStream, as_vector
from .targets import TargetDensity

__all__ = [
    "InvalidState",
    "KernelStep",
    "acceptance_probability",
    "rwm_step",
    "DiscretizedChain",
    "discretize_rwm",
]


class InvalidState(ValueError):
    """The current state has zero target density."""


@dataclass(frozen=True)
class KernelStep:
    next_state: np.ndarray
    accepted: bool
    log_ratio: float
    proposal: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, KernelStep):
            return NotImplemented
        return (
            np.array_equal(self.next_state, other.next_state)
            and self.accepted == other.accepted
            and (self.log_ratio == other.log_ratio or (math.isnan(self.log_ratio) and math.isnan(other.log_ratio)))
            and np.array_equal(self.proposal, other.proposal)
        )


def _log_ratio(lpx: float, lpy: float) -> float:
    if lpx == -math.inf or math.isnan(lpx):
        raise InvalidState("pi(x) = 0 at the current state")
    return lpy - lpx


def acceptance_probability(x, y, t: TargetDensity) -> float:
    """``min(1, pi(y) / pi(x))``."""
    lr = _log_ratio(t.log_density(x), t.log_density(y))
    return 1.0 if lr >= 0 else math.exp(lr)


def rwm_step(x, t: TargetDensity, cov: SpdMatrix, rng: RngStream, *, log_px: float | None = None) -> KernelStep:
    """One Metropolis step from ``x`` with proposal ``N(x, cov)``.

    ``log_px`` may be passed to skip re-evaluating ``log pi(x)``.
    """
    x = as_vector(x, t.dim)
    if not isinstance(cov, SpdMatrix):
        cov = SpdMatrix(cov)
    lpx = t.log_density(x) if log_px is None else log_px
    y = x + cov.chol @ rng.normal(t.dim)
    lr = _log_ratio(lpx, t.log_density(y))
    accepted = math.log(rng.uniform()) < lr
    return KernelStep(y.copy() if accepted else x.copy(), bool(accepted), float(lr), y)


@dataclass(frozen=True)
class DiscretizedChain:
    """Explicit transition matrix of a 1-d RWM chain restricted to a grid.

    ``P[i, j] = h q_v(x_j - x_i) min(1, pi_j / pi_i)`` off the diagonal and
    the rejection mass on it; ``pi`` is the normalized target on the grid.
    """

    grid: np.ndarray
    P: np.ndarray
    pi: np.ndarray
    v: float

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def stationary_power(self, tol: float = 1e-15, max_iter: int = 200_000) -> np.ndarray:
        """Left fixed point of ``P`` by power iteration from the uniform vector."""
        mu = np.full(self.grid.size, 1.0 / self.grid.size)
        for _ in range(max_iter):
            nxt = mu @ self.P
            nxt /= nxt.sum()
            if np.max(np.abs(nxt - mu)) < tol:
                return nxt
            mu = nxt
        return mu

    def reversibility_residual(self) -> float:
        flow = self.pi[:, None] * self.P
        return float(np.max(np.abs(flow - flow.T)))


def discretize_rwm(t: TargetDensity, v: float, grid) -> DiscretizedChain:
    """Build the 1-d discretized chain for proposal variance ``v``."""
    if t.dim != 1:
        raise ValueError("discretization is implemented for d = 1 only")
    grid = np.asarray(grid, dtype=float).ravel()
    h = np.diff(grid)
    if grid.size < 3 or np.any(h <= 0) or np.ptp(h) > 1e-9 * h[0]:
        raise ValueError("grid must be uniform and increasing with at least 3 points")
    v = float(np.asarray(v, dtype=float).reshape(()))
    lp = t.log_density_many(grid[:, None])
    diff = grid[None, :] - grid[:, None]
    log_q = -0.5 * math.log(2 * math.pi * v) - 0.5 * diff**2 / v
    log_acc = np.minimum(0.0, lp[None, :] - lp[:, None])
    P = h[0] * np.exp(log_q + log_acc)
    np.fill_diagonal(P, 0.0)
    off = P.sum(axis=1)
    if np.any(off > 1.0):
        raise ValueError("grid spacing too coarse: proposal mass on grid exceeds 1")
    P[np.diag_indices_from(P)] = 1.0 - off
    w = np.exp(lp - lp.max())
    return DiscretizedChain(grid, P, w / w.sum(), v)
