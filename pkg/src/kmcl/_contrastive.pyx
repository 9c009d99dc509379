# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise contrastive kernel.

Same contract as ``kmcl._contrastive_py.contrastive_terms``. Loops are
ordered so each output is accumulated in a fixed order; results are
deterministic run to run.
"""
import numpy as np

from libc.math cimport exp, log

cdef double LOG2 = 0.6931471805599453


def contrastive_terms(mu, var, labels, double tau, double dim_weight, bint use_scale):
    cdef double[:, :, ::1] m = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, :, ::1] v = np.ascontiguousarray(var, dtype=np.float64)
    cdef double[:, ::1] y = np.ascontiguousarray(labels, dtype=np.float64)
    cdef Py_ssize_t N = m.shape[0], K = m.shape[1], D = m.shape[2]
    cdef Py_ssize_t n, i, k, d
    cdef double delta, s, acc, lv, zmax, denom, inter, union, jac, w, mass, g

    rho_arr = np.zeros((N, N, K))
    weight_arr = np.zeros((N, N, K))
    lse_arr = np.zeros((N, K))
    grad_mu_arr = np.zeros((N, K, D))
    grad_var_arr = np.zeros((N, K, D))
    cdef double[:, :, ::1] rho = rho_arr
    cdef double[:, :, ::1] weight = weight_arr
    cdef double[:, ::1] lse = lse_arr
    cdef double[:, :, ::1] gmu = grad_mu_arr
    cdef double[:, :, ::1] gvar = grad_var_arr
    cdef double[:, :, ::1] logv

    if use_scale:
        logv_arr = np.log(np.asarray(v))
        logv = logv_arr

    # pairwise similarities, upper triangle mirrored
    for n in range(N):
        for i in range(n + 1, N):
            for k in range(K):
                acc = 0.0
                lv = 0.0
                for d in range(D):
                    delta = m[n, k, d] - m[i, k, d]
                    s = v[n, k, d] + v[i, k, d]
                    acc += delta * delta / s
                    if use_scale:
                        lv += log(s) - LOG2 - 0.5 * (logv[n, k, d] + logv[i, k, d])
                acc = -0.25 * dim_weight * acc
                if use_scale:
                    acc -= 0.5 * dim_weight * lv
                rho[n, i, k] = exp(acc)
                rho[i, n, k] = rho[n, i, k]

    # log-sum-exp over i != n of rho / tau
    for n in range(N):
        for k in range(K):
            zmax = -1e308
            for i in range(N):
                if i != n and rho[n, i, k] / tau > zmax:
                    zmax = rho[n, i, k] / tau
            denom = 0.0
            for i in range(N):
                if i != n:
                    denom += exp(rho[n, i, k] / tau - zmax)
            lse[n, k] = log(denom) + zmax

    # Jaccard weights over the positive set
    cdef double[::1] sizes = np.zeros(N)
    cdef Py_ssize_t count
    for n in range(N):
        for k in range(K):
            sizes[n] += y[n, k]
    for n in range(N):
        count = 0
        for i in range(N):
            if i == n:
                continue
            inter = 0.0
            for k in range(K):
                inter += y[n, k] * y[i, k]
            if inter > 0:
                count += 1
        if count == 0:
            continue
        for i in range(N):
            if i == n:
                continue
            inter = 0.0
            for k in range(K):
                inter += y[n, k] * y[i, k]
            if inter <= 0:
                continue
            union = sizes[n] + sizes[i] - inter
            jac = inter / union / count
            for k in range(K):
                weight[n, i, k] = jac * y[n, k] * y[i, k]

    cdef double loss = 0.0
    for n in range(N):
        for i in range(N):
            for k in range(K):
                if weight[n, i, k] != 0.0:
                    loss -= weight[n, i, k] * (rho[n, i, k] / tau - lse[n, k])
    loss /= N

    # dL/dlog_rho for each ordered pair, then symmetric accumulation
    cdef double[:, :, ::1] glog = np.zeros((N, N, K))
    for n in range(N):
        for k in range(K):
            mass = 0.0
            for i in range(N):
                mass += weight[n, i, k]
            if mass == 0.0:
                continue
            for i in range(N):
                if i == n:
                    continue
                g = -(weight[n, i, k] - mass * exp(rho[n, i, k] / tau - lse[n, k])) / N
                glog[n, i, k] = g * rho[n, i, k] / tau

    for n in range(N):
        for i in range(N):
            if i == n:
                continue
            for k in range(K):
                g = glog[n, i, k] + glog[i, n, k]
                if g == 0.0:
                    continue
                for d in range(D):
                    delta = m[n, k, d] - m[i, k, d]
                    s = v[n, k, d] + v[i, k, d]
                    gmu[n, k, d] += g * (-0.5 * dim_weight * delta / s)
                    w = 0.25 * dim_weight * delta * delta / (s * s)
                    if use_scale:
                        w -= 0.5 * dim_weight * (1.0 / s - 0.5 / v[n, k, d])
                    gvar[n, k, d] += g * w

    return loss, grad_mu_arr, grad_var_arr
