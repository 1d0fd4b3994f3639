# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``svbp.kernels._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, pow, INFINITY

cnp.import_array()


def rbf_stein(const double[:, ::1] Z, const double[:, ::1] G, double h):
    cdef Py_ssize_t n = Z.shape[0], dz = Z.shape[1], dg = G.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double sq, diff, kij, c = 2.0 / h, inv_n = 1.0 / n
    drive_arr = np.zeros((n, dg), dtype=np.float64)
    rep_arr = np.zeros((n, dz), dtype=np.float64)
    cdef double[:, ::1] drive = drive_arr
    cdef double[:, ::1] rep = rep_arr
    for i in range(n):
        for j in range(n):
            sq = 0.0
            for k in range(dz):
                diff = Z[i, k] - Z[j, k]
                sq = sq + diff * diff
            kij = exp(-sq / h)
            for k in range(dg):
                drive[i, k] += kij * G[j, k]
            for k in range(dz):
                rep[i, k] += kij * c * (Z[i, k] - Z[j, k])
        for k in range(dg):
            drive[i, k] *= inv_n
        for k in range(dz):
            rep[i, k] *= inv_n
    return drive_arr, rep_arr


def message_reduce(const double[:, ::1] logits, const double[:, :, ::1] grads):
    cdef Py_ssize_t n = logits.shape[0], m = logits.shape[1], f = grads.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double mx, w, s
    logm_arr = np.empty(n, dtype=np.float64)
    grad_arr = np.zeros((n, f), dtype=np.float64)
    cdef double[::1] logm = logm_arr
    cdef double[:, ::1] g = grad_arr
    for i in range(n):
        mx = -INFINITY
        for j in range(m):
            if logits[i, j] > mx:
                mx = logits[i, j]
        if mx == -INFINITY:
            logm[i] = -INFINITY
            continue
        s = 0.0
        for j in range(m):
            w = exp(logits[i, j] - mx)
            s = s + w
            if w != 0.0:
                for k in range(f):
                    g[i, k] += w * grads[i, j, k]
        logm[i] = mx + log(s)
        for k in range(f):
            g[i, k] /= s
    return logm_arr, grad_arr


def distance_pairwise(const double[:, ::1] xs, const double[:, ::1] xt, double L, double alpha):
    cdef Py_ssize_t n = xs.shape[0], m = xt.shape[0], i, j
    cdef double dx, dy, d, res, coef
    logp_arr = np.empty((n, m), dtype=np.float64)
    grad_arr = np.zeros((n, m, 2), dtype=np.float64)
    cdef double[:, ::1] logp = logp_arr
    cdef double[:, :, ::1] g = grad_arr
    for i in range(n):
        for j in range(m):
            dx = xs[i, 0] - xt[j, 0]
            dy = xs[i, 1] - xt[j, 1]
            d = sqrt(dx * dx + dy * dy)
            res = d - L
            logp[i, j] = -alpha * res * res
            if d > 0.0:
                coef = -2.0 * alpha * res / d
                g[i, j, 0] = coef * dx
                g[i, j, 1] = coef * dy
    return logp_arr, grad_arr


def collision_pairwise(const double[:, :, ::1] ps, const double[:, :, ::1] pt,
                       const double[::1] alphas, double r, double beta, double dmin):
    cdef Py_ssize_t n = ps.shape[0], m = pt.shape[0], kk = ps.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double dx, dy, d, total, dd, slope
    cdef double rb = pow(r, beta)
    logp_arr = np.zeros((n, m), dtype=np.float64)
    grad_arr = np.zeros((n, m, kk, 2), dtype=np.float64)
    cdef double[:, ::1] logp = logp_arr
    cdef double[:, :, :, ::1] g = grad_arr
    for i in range(n):
        for j in range(m):
            total = 0.0
            for k in range(kk):
                dx = ps[i, k, 0] - pt[j, k, 0]
                dy = ps[i, k, 1] - pt[j, k, 1]
                d = sqrt(dx * dx + dy * dy)
                if d <= r:
                    total = total - alphas[k] * (1.0 - pow(d / r, beta))
                    if d > 0.0 and alphas[k] != 0.0:
                        dd = d if d > dmin else dmin
                        slope = alphas[k] * beta * pow(dd, beta - 1.0) / rb
                        g[i, j, k, 0] = slope * dx / d
                        g[i, j, k, 1] = slope * dy / d
            logp[i, j] = total
    return logp_arr, grad_arr


def rbf_sum(const double[:, ::1] A, const double[:, ::1] B, double h):
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double sq, diff, acc = 0.0, row
    for i in range(n):
        row = 0.0
        for j in range(m):
            sq = 0.0
            for k in range(d):
                diff = A[i, k] - B[j, k]
                sq = sq + diff * diff
            row = row + exp(-sq / h)
        acc = acc + row
    return acc


def grid_conditional_draw(const double[::1] base, const double[:, ::1] grid,
                          const double[:, ::1] nbr, const double[::1] L,
                          const double[::1] alpha, double u, double[::1] work):
    cdef Py_ssize_t ng = grid.shape[0], nn = nbr.shape[0], c, t
    cdef double v, dx, dy, d, res, mx = -INFINITY, total = 0.0, target
    for c in range(ng):
        v = base[c]
        for t in range(nn):
            dx = grid[c, 0] - nbr[t, 0]
            dy = grid[c, 1] - nbr[t, 1]
            d = sqrt(dx * dx + dy * dy)
            res = d - L[t]
            v = v - alpha[t] * res * res
        work[c] = v
        if v > mx:
            mx = v
    if mx == -INFINITY:
        return -1
    for c in range(ng):
        v = work[c] - mx
        # exp(-60) is below double resolution relative to the peak cell
        if v > -60.0:
            total = total + exp(v)
        work[c] = total
    target = u * total
    for c in range(ng):
        if work[c] > target:
            return c
    return ng - 1
