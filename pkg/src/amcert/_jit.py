"""numba kernels: built-in log densities and the AM chain loop.

Both are compiled with ``cache=True``, so the one-off compile cost is paid
once per machine rather than once per process.

The loop mirrors :func:`amcert.adapt.run_am_chain`'s pure-Python path step
for step (same random numbers, same update formulas); only the Cholesky
factorization differs in rounding. Imported lazily, numba is slow to load.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# variant codes shared with adapt.py
MODIFIED, ORIGINAL, ORIGINAL_PRINTED = 0, 1, 2
# status codes
OK, NOT_PD, BAD_START, OVERFLOW = 0, 1, 2, 3


# target kinds; parameters travel as (centers (K, d), precisions (K, d, d),
# log weights (K,), scalar) so one compiled signature serves every built-in
GAUSSIAN, MIXTURE, POWER_EXP, CAUCHY = 0, 1, 2, 3


@njit(cache=True)
def builtin_logpdf(kind, centers, precs, logw, scalar, x):
    d = x.shape[0]
    if kind == POWER_EXP or kind == CAUCHY:
        s = 0.0
        for i in range(d):
            s += x[i] * x[i]
        if kind == POWER_EXP:
            return -(math.sqrt(s) ** scalar)
        return -scalar * math.log1p(s)
    k_n = centers.shape[0]
    vals = np.empty(k_n)
    for k in range(k_n):
        s = 0.0
        for i in range(d):
            zi = x[i] - centers[k, i]
            for j in range(d):
                s += zi * precs[k, i, j] * (x[j] - centers[k, j])
        vals[k] = logw[k] - 0.5 * s
    if kind == GAUSSIAN:
        return vals[0]
    m = vals.max()
    acc = 0.0
    for k in range(k_n):
        acc += math.exp(vals[k] - m)
    return m + math.log(acc)


def pack(kind, d, centers=None, precs=None, logw=None, scalar=0.0):
    """Normalize built-in parameters to the compiled signature."""
    centers = np.zeros((1, d)) if centers is None else np.ascontiguousarray(centers, dtype=np.float64)
    precs = np.zeros((1, d, d)) if precs is None else np.ascontiguousarray(precs, dtype=np.float64)
    logw = np.zeros(centers.shape[0]) if logw is None else np.ascontiguousarray(logw, dtype=np.float64)
    return (kind, centers, precs, logw, float(scalar))


@njit(cache=True)
def _chol(a, out):
    d = a.shape[0]
    for j in range(d):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not s > 0.0:
            return False
        out[j, j] = math.sqrt(s)
        for i in range(j + 1, d):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / out[j, j]
        for i in range(j):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def am_loop(
    kind,
    centers,
    precs,
    logw,
    scalar,
    x0,
    mean0,
    cov0,
    sigma0,
    theta,
    kappa,
    gamma_w,
    variant,
    burn_in,
    sched_enabled,
    t_bound,
    eps_prime,
    normals,
    uniforms,
    snap_every,
    lp_floor,
):
    n_steps = uniforms.shape[0]
    d = x0.shape[0]
    states = np.empty((n_steps + 1, d))
    accepted = np.zeros(n_steps, dtype=np.bool_)
    hits = np.zeros(n_steps, dtype=np.bool_)
    mean_norm = np.empty(n_steps + 1)
    cov_norm = np.empty(n_steps + 1)
    n_snap = n_steps // snap_every + 2
    snap_steps = np.empty(n_snap, dtype=np.int64)
    snap_mean = np.empty((n_snap, d))
    snap_cov = np.empty((n_snap, d, d))

    x = x0.copy()
    mean = mean0.copy()
    cov = cov0.copy()
    prop = np.empty((d, d))
    L = np.zeros((d, d))
    y = np.empty(d)
    dev = np.empty(d)
    new_mean = np.empty(d)
    new_cov = np.empty((d, d))

    states[0] = x
    mean_norm[0] = math.sqrt(np.sum(mean * mean))
    cov_norm[0] = math.sqrt(np.sum(cov * cov))
    snap_steps[0] = 0
    snap_mean[0] = mean
    snap_cov[0] = cov
    s_i = 1

    lpx = builtin_logpdf(kind, centers, precs, logw, scalar, x)
    if not math.isfinite(lpx):
        return BAD_START, 0, states, accepted, hits, mean_norm, cov_norm, snap_steps[:s_i], snap_mean[:s_i], snap_cov[:s_i]

    for n in range(n_steps):
        if n <= burn_in:
            for i in range(d):
                for j in range(d):
                    prop[i, j] = theta * sigma0[i, j]
        else:
            for i in range(d):
                for j in range(d):
                    prop[i, j] = theta * cov[i, j]
        if not _chol(prop, L):
            return NOT_PD, n, states, accepted, hits, mean_norm, cov_norm, snap_steps[:s_i], snap_mean[:s_i], snap_cov[:s_i]
        for i in range(d):
            s = x[i]
            for j in range(i + 1):
                s += L[i, j] * normals[n * d + j]
            y[i] = s
        lpy = builtin_logpdf(kind, centers, precs, logw, scalar, y)
        if math.log(uniforms[n]) < lpy - lpx:
            for i in range(d):
                x[i] = y[i]
            lpx = lpy
            accepted[n] = True
            if lpx < lp_floor:
                states[n + 1] = x
                return OVERFLOW, n + 1, states, accepted, hits, mean_norm, cov_norm, snap_steps[:s_i], snap_mean[:s_i], snap_cov[:s_i]
        states[n + 1] = x

        # adaptation: S_{k} from S_{k-1} and X_k, k = n + 1
        k = n + 1
        for i in range(d):
            dev[i] = x[i] - mean[i]
        if variant == MODIFIED:
            if gamma_w == 1.0:
                w_old = k / (k + 1.0)
                w_new = 1.0 / (k + 1.0)
            else:
                w_new = (k + 1.0) ** (-gamma_w)
                w_old = 1.0 - w_new
            for i in range(d):
                new_mean[i] = w_old * mean[i] + w_new * x[i]
                for j in range(d):
                    e = dev[i] * dev[j]
                    if i == j:
                        e += kappa
                    new_cov[i, j] = w_old * cov[i, j] + w_new * e
        else:
            for i in range(d):
                new_mean[i] = (k / (k + 1.0)) * mean[i] + (1.0 / (k + 1.0)) * x[i]
            a = (k - 1.0) / k
            bw = 1.0 / (k + 1.0)
            for i in range(d):
                for j in range(d):
                    if variant == ORIGINAL:
                        c = cov[i, j]
                        if i == j:
                            c -= kappa
                        c = a * c + bw * (dev[i] * dev[j])
                        if i == j:
                            c += kappa
                    else:
                        e = dev[i] * dev[j]
                        if i == j:
                            e += kappa
                        c = a * cov[i, j] + bw * e
                    new_cov[i, j] = c
        mn = math.sqrt(np.sum(new_mean * new_mean))
        cn = math.sqrt(np.sum(new_cov * new_cov))
        if sched_enabled and max(mn, cn) > t_bound * k**eps_prime:
            hits[n] = True
            mean_norm[k] = mean_norm[n]
            cov_norm[k] = cov_norm[n]
        else:
            for i in range(d):
                mean[i] = new_mean[i]
                for j in range(d):
                    cov[i, j] = new_cov[i, j]
            mean_norm[k] = mn
            cov_norm[k] = cn
        if k % snap_every == 0 or k == n_steps:
            snap_steps[s_i] = k
            snap_mean[s_i] = mean
            snap_cov[s_i] = cov
            s_i += 1

    return OK, n_steps, states, accepted, hits, mean_norm, cov_norm, snap_steps[:s_i], snap_mean[:s_i], snap_cov[:s_i]
