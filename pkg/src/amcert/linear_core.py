"""Dense symmetric linear algebra, Gaussian sampling and random streams.

Everything downstream (targets, kernel, adaptation, certification) goes
through the helpers here, so the numerical conventions live in one place:

* matrices are symmetrized as ``(m + m.T) / 2`` before factorization;
* every :class:`SpdMatrix` carries a certified lower bound on its smallest
  eigenvalue;
* random draws come from an :class:`RngStream`, which keeps the uniform and
  Gaussian draws on two independent substreams so that block-buffered and
  one-at-a-time consumption give identical sequences.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "NotPositiveDefinite",
    "DimensionMismatch",
    "SpdMatrix",
    "RngStream",
    "as_vector",
    "cholesky",
    "sample_gaussian",
    "log_gaussian_density",
    "splitmix64",
    "derive_seed",
]

_LOG_2PI = math.log(2.0 * math.pi)
_MASK64 = (1 << 64) - 1


class NotPositiveDefinite(ValueError):
    """A Cholesky pivot was not strictly positive."""


class DimensionMismatch(ValueError):
    pass


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite 1-d float array (scalars become length 1)."""
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {v.shape}")
    if v.size < 1:
        raise DimensionMismatch("vectors must have at least one entry")
    if dim is not None and v.size != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {v.size}")
    if not np.isfinite(v).all():
        raise ValueError("vector entries must be finite")
    return v


def _eigen_floor(a: np.ndarray) -> tuple[float, float]:
    """``(smallest eigenvalue, that value minus a backward-error allowance clipped at 0)``."""
    w = np.linalg.eigvalsh(a)
    slack = 8.0 * a.shape[0] * np.finfo(float).eps * max(abs(w[-1]), abs(w[0]))
    return float(w[0]), max(0.0, float(w[0]) - slack)


class SpdMatrix:
    """Symmetric positive-definite matrix with a certified eigenvalue floor.

    Parameters
    ----------
    entries : array_like
        A ``d x d`` matrix (a scalar is read as ``1 x 1``). It is symmetrized
        before anything else happens.
    certified_floor : float, optional
        A known lower bound on the smallest eigenvalue, e.g. ``kappa`` for
        the AM covariance. It is accepted when ``entries - floor * I``
        admits a Cholesky factor and otherwise checked against a numeric
        eigenvalue computation; when omitted the numeric bound is used.
    """

    __slots__ = ("_a", "_floor", "_chol")

    def __init__(self, entries, certified_floor: float | None = None):
        a = np.atleast_2d(np.array(entries, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
        amax = float(np.abs(a).max())
        if not math.isfinite(amax):
            raise ValueError("matrix entries must be finite")
        scale = max(1.0, amax)
        if np.abs(a - a.T).max() > 1e-12 * scale:
            raise ValueError("matrix is not symmetric to within 1e-12 relative")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self._a = a
        self._chol = None
        if certified_floor is None:
            floor = _eigen_floor(a)[1]
        else:
            floor = float(certified_floor)
            if floor < 0:
                raise ValueError("certified_floor must be non-negative")
            # a - floor I factors only if floor <= lambda_min (to rounding);
            # the eigenvalue check decides the remaining cases
            shifted = a.copy()
            shifted.flat[:: a.shape[0] + 1] -= floor
            if not _try_factor(shifted)[1]:
                w_min, numeric = _eigen_floor(a)
                if floor > w_min + 1e-12 * max(1.0, abs(w_min)):
                    raise ValueError(
                        f"certified_floor {floor!r} exceeds the smallest eigenvalue {w_min!r}"
                    )
                if floor > w_min:
                    # declared bound beaten by rounding only; fall back to the numeric one
                    floor = numeric
        self._floor = floor
        # factor eagerly: an SpdMatrix that cannot be factored must not exist
        self._chol = _factor(a)

    @classmethod
    def identity(cls, d: int) -> "SpdMatrix":
        return cls(np.eye(d), certified_floor=1.0)

    @property
    def entries(self) -> np.ndarray:
        return self._a

    @property
    def dim(self) -> int:
        return self._a.shape[0]

    @property
    def certified_floor(self) -> float:
        return self._floor

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def det(self) -> float:
        return math.exp(self.logdet())

    def frobenius(self) -> float:
        return float(np.linalg.norm(self._a, "fro"))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self._a)[0])

    def scaled(self, c: float) -> "SpdMatrix":
        if c <= 0:
            raise ValueError("scale must be positive")
        return SpdMatrix(c * self._a, certified_floor=c * self._floor)

    def __array__(self, dtype=None, copy=None):
        return np.array(self._a, dtype=dtype)

    def __repr__(self) -> str:
        return f"SpdMatrix({self._a.tolist()!r}, certified_floor={self._floor!r})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpdMatrix):
            return NotImplemented
        return np.array_equal(self._a, other._a)

    __hash__ = None


def _try_factor(a: np.ndarray) -> tuple[np.ndarray, bool]:
    # direct LAPACK call: the numpy wrapper costs several times more on small matrices
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    return c, info == 0


def _factor(a: np.ndarray) -> np.ndarray:
    c, ok = _try_factor(a)
    if not ok:
        raise NotPositiveDefinite("Cholesky pivot <= 0: the kappa*I eigenvalue floor was violated upstream")
    return c


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Accepts an :class:`SpdMatrix` (the cached factor is returned) or any
    square array, which is symmetrized first.
    """
    if isinstance(m, SpdMatrix):
        return m.chol.copy()
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return _factor(0.5 * (a + a.T))


class RngStream:
    """Single-owner random stream for one chain.

    Uniforms and standard normals are drawn from two independent PCG64
    substreams spawned from one ``SeedSequence(seed)``. Each substream is
    consumed in blocks; numpy generators produce the same sequence whether
    values are requested singly or in blocks, so buffering is invisible.
    """

    _BLOCK = 4096

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        uss, nss = np.random.SeedSequence(self.seed).spawn(2)
        self._ugen = np.random.Generator(np.random.PCG64(uss))
        self._ngen = np.random.Generator(np.random.PCG64(nss))
        self._ubuf = np.empty(0)
        self._upos = 0
        self._nbuf = np.empty(0)
        self._npos = 0

    def uniform(self) -> float:
        if self._upos >= self._ubuf.size:
            self._ubuf = self._ugen.random(self._BLOCK)
            self._upos = 0
        u = self._ubuf[self._upos]
        self._upos += 1
        return float(u)

    def normal(self, d: int) -> np.ndarray:
        out = np.empty(d)
        filled = 0
        while filled < d:
            if self._npos >= self._nbuf.size:
                self._nbuf = self._ngen.standard_normal(max(self._BLOCK, d))
                self._npos = 0
            take = min(d - filled, self._nbuf.size - self._npos)
            out[filled : filled + take] = self._nbuf[self._npos : self._npos + take]
            self._npos += take
            filled += take
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` consecutive values of the uniform substream."""
        return self._bulk(self._ugen.random, "_ubuf", "_upos", n)

    def normals(self, n: int) -> np.ndarray:
        """``n`` consecutive scalars of the normal substream."""
        return self._bulk(self._ngen.standard_normal, "_nbuf", "_npos", n)

    def _bulk(self, draw, buf_name, pos_name, n):
        buf = getattr(self, buf_name)
        pos = getattr(self, pos_name)
        head = buf[pos : pos + n]
        setattr(self, pos_name, pos + head.size)
        need = n - head.size
        return np.concatenate([head, draw(need)]) if need > 0 else head.copy()

    def spawn_sphere(self, n: int, d: int) -> np.ndarray:
        """``n`` uniformly distributed unit vectors in ``R^d``."""
        z = self.normals(n * d).reshape(n, d)
        norms = np.linalg.norm(z, axis=1)
        norms[norms == 0] = 1.0
        return z / norms[:, None]


def sample_gaussian(mean, cov: SpdMatrix, rng: RngStream) -> np.ndarray:
    """``mean + L z`` with ``z`` standard normal drawn from ``rng``."""
    mean = as_vector(mean)
    if not isinstance(cov, SpdMatrix):
        cov = SpdMatrix(cov)
    if cov.dim != mean.size:
        raise DimensionMismatch(f"mean has dimension {mean.size}, cov {cov.dim}")
    z = rng.normal(mean.size)
    return mean + cov.chol @ z


def log_gaussian_density(x, mean, cov) -> float:
    """Normalized log density of ``N(mean, cov)`` at ``x``."""
    x = as_vector(x)
    mean = as_vector(mean, x.size)
    if not isinstance(cov, SpdMatrix):
        cov = SpdMatrix(cov)
    if cov.dim != x.size:
        raise DimensionMismatch(f"x has dimension {x.size}, cov {cov.dim}")
    w = np.linalg.solve(cov.chol, x - mean)
    return -0.5 * x.size * _LOG_2PI - 0.5 * cov.logdet() - 0.5 * float(w @ w)


def splitmix64(z: int) -> int:
    """SplitMix64 finalizer; a bijection on 64-bit integers."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(root_seed: int, chain_index: int) -> int:
    """Seed of chain ``chain_index`` under ``root_seed``.

    ``splitmix64(root ^ splitmix64(chain_index))``, all arithmetic mod 2**64.
    Depends only on the pair, so a chain reproduces whether it runs alone
    or alongside others.
    """
    if chain_index < 0:
        raise ValueError("chain_index must be non-negative")
    return splitmix64((int(root_seed) & _MASK64) ^ splitmix64(int(chain_index)))
