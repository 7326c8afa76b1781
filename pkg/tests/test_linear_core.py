import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amcert.linear_core import (
    DimensionMismatch,
    NotPositiveDefinite,
    RngStream,
    SpdMatrix,
    cholesky,
    derive_seed,
    log_gaussian_density,
    sample_gaussian,
    splitmix64,
)


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(SpdMatrix.identity(3)), np.eye(3))


def test_cholesky_diagonal():
    np.testing.assert_allclose(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_cholesky_reproduces_input():
    m = np.array([[2.0, 1.0], [1.0, 2.0]])
    L = cholesky(SpdMatrix(m))
    assert np.allclose(L, np.tril(L))
    assert np.linalg.norm(L @ L.T - m) / np.linalg.norm(m) < 1e-10


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        SpdMatrix([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        cholesky([[0.0, 0.0], [0.0, 1.0]])


def test_symmetry_tolerance():
    SpdMatrix([[2.0, 1.0 + 1e-14], [1.0, 2.0]])
    with pytest.raises(ValueError):
        SpdMatrix([[2.0, 1.1], [1.0, 2.0]])


def test_certified_floor_checked():
    m = SpdMatrix(np.diag([0.5, 3.0]), certified_floor=0.5)
    assert m.certified_floor <= m.min_eigenvalue()
    with pytest.raises(ValueError):
        SpdMatrix(np.diag([0.5, 3.0]), certified_floor=0.6)
    assert SpdMatrix(np.diag([0.5, 3.0])).certified_floor <= 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_random_spd_floor_below_pivots(d, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, d))
    m = SpdMatrix(a @ a.T + 0.1 * np.eye(d))
    L = m.chol
    assert np.linalg.norm(L @ L.T - m.entries) <= 1e-10 * np.linalg.norm(m.entries)
    assert m.certified_floor <= np.linalg.eigvalsh(m.entries)[0]


def test_sample_gaussian_deterministic():
    cov = SpdMatrix([[2.0, 0.3], [0.3, 1.0]])
    a = sample_gaussian([1.0, 2.0], cov, RngStream(11))
    b = sample_gaussian([1.0, 2.0], cov, RngStream(11))
    np.testing.assert_array_equal(a, b)


def test_sample_gaussian_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        sample_gaussian([0.0, 0.0, 0.0], SpdMatrix.identity(2), RngStream(0))


def test_sample_gaussian_moments():
    rng = RngStream(5)
    draws = np.array([sample_gaussian(np.zeros(2), SpdMatrix.identity(2), rng) for _ in range(100_000)])
    assert np.linalg.norm(np.cov(draws.T) - np.eye(2)) / np.linalg.norm(np.eye(2)) < 0.05
    cov = SpdMatrix([[3.0, -1.0], [-1.0, 2.0]])
    draws = np.array([sample_gaussian([7.0, 7.0], cov, rng) for _ in range(100_000)])
    assert np.all(np.abs(draws.mean(axis=0) - 7.0) < 0.05)


def test_log_gaussian_density_values():
    assert log_gaussian_density([0.0], [0.0], [[1.0]]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert log_gaussian_density([1.0], [0.0], [[1.0]]) == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-15)
    # 2x2 by hand: det = 3, inverse = [[2,-1],[-1,2]]/3, quadratic form (1,1) -> 2/3
    expected = -math.log(2 * math.pi) - 0.5 * math.log(3.0) - 0.5 * (2.0 / 3.0)
    assert log_gaussian_density([1.0, 1.0], [0.0, 0.0], [[2.0, 1.0], [1.0, 2.0]]) == pytest.approx(expected, abs=1e-14)


def test_log_gaussian_density_normalized():
    sigma = 1.7
    x = np.linspace(-10 * sigma, 10 * sigma, 20001)
    dens = np.exp([log_gaussian_density([xi], [0.3], [[sigma**2]]) for xi in x + 0.3])
    assert abs(np.trapezoid(dens, x) - 1.0) < 1e-8


def test_rng_buffering_invisible():
    a, b = RngStream(3), RngStream(3)
    singles = [a.uniform() for _ in range(5000)]
    np.testing.assert_array_equal(singles, b.uniforms(5000))
    np.testing.assert_array_equal(np.concatenate([a.normal(3) for _ in range(2000)]), b.normals(6000))


def test_splitmix_reference_values():
    # first outputs of the reference SplitMix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(42, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(42, 3) == derive_seed(42, 3)
    assert all(0 <= s < 2**64 for s in seeds)
    with pytest.raises(ValueError):
        derive_seed(1, -1)
