import json
import math

import numpy as np
import pytest
from scipy import stats

from amcert.adapt import AdaptationState, AmConfig, ChainTrace, ConstraintSchedule, run_am_chain
from amcert.diagnostics import (
    TooShort,
    adaptation_limit,
    clt_batch_means,
    running_average,
    v_moment_track,
)
from amcert.linear_core import SpdMatrix
from amcert.targets import DriftFunction, gaussian

RHO_COV = np.array([[1.0, 0.9], [0.9, 1.0]])


def _sq_norm(xs):
    return np.sum(xs**2, axis=1)


@pytest.fixture(scope="module")
def gauss2_run():
    t = gaussian([0.0, 0.0], RHO_COV)
    trace = run_am_chain(AmConfig(), ConstraintSchedule(), t, [0.0, 0.0], np.eye(2), 100_000, 7, snapshot_every=1000)
    return t, trace


# -- running average ----------------------------------------------------------


def test_running_average_constant_is_exact():
    xs = np.random.default_rng(0).standard_normal((1001, 3))
    series = running_average(xs, lambda x: np.ones(x.shape[0]), [1, 10, 1000])
    np.testing.assert_array_equal(series.values, 1.0)


def test_running_average_hand_sequence():
    # X_0 = 100 is excluded; f(x) = x on X_1..X_4 = 1, 2, 3, 4
    series = running_average(np.array([100.0, 1.0, 2.0, 3.0, 4.0]), lambda x: x[:, 0], [1, 2, 4])
    np.testing.assert_array_equal(series.values, [1.0, 1.5, 2.5])
    assert series.to_csv().splitlines()[0].startswith("n,")


def test_running_average_linear_in_f():
    xs = np.random.default_rng(1).standard_normal((501, 2))
    cps = [5, 50, 500]
    a = running_average(xs, lambda x: x[:, 0], cps).values
    b = running_average(xs, _sq_norm, cps).values
    c = running_average(xs, lambda x: 2.0 * x[:, 0] - 3.0 * np.sum(x**2, axis=1), cps).values
    np.testing.assert_allclose(c, 2 * a - 3 * b, rtol=1e-12, atol=1e-12)


def test_running_average_per_row_fallback():
    xs = np.arange(12.0).reshape(6, 2)
    series = running_average(xs, lambda x: float(x[0] + x[1]), [5])
    assert series.values[0] == pytest.approx(np.mean(xs[1:].sum(axis=1)))


def test_running_average_checkpoint_validation():
    xs = np.zeros((11, 1))
    for bad in ([0], [12], [5, 5]):
        with pytest.raises(ValueError):
            running_average(xs, _sq_norm, bad)


def test_running_average_gaussian_2d(gauss2_run):
    t, trace = gauss2_run
    series = running_average(trace, _sq_norm, [1000, 10_000, 100_000], reference=2.0)
    assert series.relative_error[-1] < 0.05


# -- V^r moments --------------------------------------------------------------


def test_v_moment_stationary_is_flat(gauss2_run):
    t, trace = gauss2_run
    track = v_moment_track(trace, DriftFunction.for_target(t), 0.5)
    assert not track.flagged
    assert track.slope < 1.0
    assert np.all(np.diff(track.running_max) >= 0)


def test_v_moment_divergent_flagged():
    t = gaussian([0.0], [[1.0]])
    xs = np.arange(0.0, 20_001.0)[:, None] * 1e-3  # x_k = k / 1000
    track = v_moment_track(xs, DriftFunction.for_target(t), 1.0)
    # log V grows like k^2, so the log-log slope of the running max is large
    assert track.flagged and track.slope > 1.0


def test_v_moment_overflow_is_inf():
    t = gaussian([0.0], [[1.0]])
    xs = np.arange(0.0, 2001.0)[:, None]
    track = v_moment_track(xs, DriftFunction.for_target(t), 1.0)
    assert math.isinf(track.running_max[-1]) and track.flagged


def test_v_moment_r_domain():
    t = gaussian([0.0], [[1.0]])
    for r in (0.0, -1.0, 1.5):
        with pytest.raises(ValueError):
            v_moment_track(np.zeros((10, 1)), DriftFunction.for_target(t), r)


# -- batch means --------------------------------------------------------------


def test_batch_means_constant_is_zero():
    rep = clt_batch_means(np.zeros((10_001, 1)), lambda x: np.full(x.shape[0], 3.0))
    assert rep.sigma2_hat == 0.0 and rep.skewness == 0.0 and rep.excess_kurtosis == 0.0


def test_batch_means_iid_variance():
    xs = np.random.default_rng(2).standard_normal((200_001, 1))
    rep = clt_batch_means(xs, lambda x: x[:, 0], burn_frac=0.0)
    # iid N(0,1): the asymptotic variance is 1; 50 batches give about 20% sd
    assert abs(rep.sigma2_hat - 1.0) < 0.45
    reps = [clt_batch_means(np.random.default_rng(s).standard_normal((100_001, 1)), lambda x: x[:, 0]).sigma2_hat for s in range(20)]
    assert abs(np.mean(reps) - 1.0) < 0.15


def test_batch_means_ar1_variance():
    # unit-variance AR(1): asymptotic variance (1 + phi) / (1 - phi) = 3 at phi = 0.5
    rng = np.random.default_rng(3)
    n, phi = 500_001, 0.5
    e = rng.standard_normal(n) * math.sqrt(1 - phi**2)
    x = np.empty(n)
    x[0] = 0.0
    for k in range(1, n):
        x[k] = phi * x[k - 1] + e[k]
    rep = clt_batch_means(x, lambda v: v[:, 0], n_batches=50)
    assert abs(rep.sigma2_hat - 3.0) / 3.0 < 0.45


def test_batch_means_shift_invariant():
    xs = np.random.default_rng(4).standard_normal((20_001, 1))
    a = clt_batch_means(xs, lambda x: x[:, 0])
    b = clt_batch_means(xs, lambda x: x[:, 0] + 1e3)
    assert b.sigma2_hat == pytest.approx(a.sigma2_hat, rel=1e-9)
    assert b.skewness == pytest.approx(a.skewness, abs=1e-8)


def test_batch_means_too_short_and_domain():
    with pytest.raises(TooShort):
        clt_batch_means(np.zeros((2000, 1)), lambda x: x[:, 0])
    with pytest.raises(ValueError):
        clt_batch_means(np.zeros((20_000, 1)), lambda x: x[:, 0], n_batches=10)
    with pytest.raises(ValueError):
        clt_batch_means(np.zeros((20_000, 1)), lambda x: x[:, 0], burn_frac=1.0)


def test_batch_means_report_serializes():
    rep = clt_batch_means(np.random.default_rng(5).standard_normal((10_001, 1)), lambda x: x[:, 0])
    d = json.loads(rep.to_json())
    assert d["n_batches"] == 50 and len(d["batch_means"]) == 50
    assert rep.to_csv().count("\n") == 51


def test_batch_means_normal_on_am_chain():
    t = gaussian([0.0], [[1.0]])
    trace = run_am_chain(AmConfig(), ConstraintSchedule(), t, [0.0], [[1.0]], 500_000, 11, snapshot_every=10_000)
    rep = clt_batch_means(trace, lambda x: x[:, 0])
    z = (rep.batch_means - rep.batch_means.mean()) / rep.batch_means.std(ddof=1)
    assert stats.shapiro(z).pvalue > 0.01
    assert abs(rep.skewness) < 1.0 and abs(rep.excess_kurtosis) < 2.0


# -- adaptation limit ---------------------------------------------------------


def _fake_trace(states_list, dim):
    return ChainTrace(
        states=np.zeros((2, dim)),
        accepted=np.zeros(1, dtype=bool),
        mean_norms=np.zeros(2),
        cov_norms=np.zeros(2),
        hit_mask=np.zeros(1, dtype=bool),
        snapshots=states_list,
        seed=0,
    )


def test_adaptation_limit_zero_at_limit():
    kappa = 0.01
    snaps = [AdaptationState(np.array([1.0, -1.0]), SpdMatrix(RHO_COV + kappa * np.eye(2)), n) for n in (0, 10)]
    steps, dist = adaptation_limit(_fake_trace(snaps, 2), [1.0, -1.0], RHO_COV, kappa)
    np.testing.assert_array_equal(steps, [0, 10])
    np.testing.assert_array_equal(dist, 0.0)
    # shifting kappa by one moves the covariance target by I, whose norm is sqrt(d)
    _, dist1 = adaptation_limit(_fake_trace(snaps, 2), [1.0, -1.0], RHO_COV, kappa + 1.0)
    np.testing.assert_allclose(dist1, math.sqrt(2), rtol=1e-14)


def test_adaptation_limit_shrinks_along_run(gauss2_run):
    t, trace = gauss2_run
    steps, dist = adaptation_limit(trace, [0.0, 0.0], RHO_COV, 0.01)
    assert np.all(np.diff(steps) > 0)
    assert dist[-10:].mean() < dist[:3].mean()
    assert dist[-1] < 0.15
