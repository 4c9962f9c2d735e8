# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Reductions run in fixed sequential index order."""

import numpy as np
from libc.math cimport sqrt, tanh, exp

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def pairwise_l2(double[:, ::1] h, double eps):
    cdef Py_ssize_t n = h.shape[0], d = h.shape[1], i, j, k
    cdef double acc, t
    out_arr = np.empty((n, n))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        out[i, i] = sqrt(eps)
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                t = h[i, k] - h[j, k]
                acc += t * t
            acc = sqrt(acc + eps)
            out[i, j] = acc
            out[j, i] = acc
    return out_arr


def pairwise_l2_backward(double[:, ::1] h, double[:, ::1] dist, double[:, ::1] gdist):
    cdef Py_ssize_t n = h.shape[0], d = h.shape[1], i, j, k
    cdef double w
    g_arr = np.zeros((n, d))
    cdef double[:, ::1] g = g_arr
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            w = (gdist[i, j] + gdist[j, i]) / dist[i, j]
            if w == 0.0:
                continue
            for k in range(d):
                g[i, k] += w * (h[i, k] - h[j, k])
    return g_arr


def layer_norm_forward(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, k
    cdef double mu, var, r, t
    y_arr = np.empty((n, d))
    xhat_arr = np.empty((n, d))
    rstd_arr = np.empty(n)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    for i in range(n):
        mu = 0.0
        for k in range(d):
            mu += x[i, k]
        mu /= d
        var = 0.0
        for k in range(d):
            t = x[i, k] - mu
            var += t * t
        var /= d
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for k in range(d):
            t = (x[i, k] - mu) * r
            xhat[i, k] = t
            y[i, k] = t * gamma[k] + beta[k]
    return y_arr, xhat_arr, rstd_arr


def layer_norm_backward(double[:, ::1] gy, double[:, ::1] xhat, double[::1] rstd, double[::1] gamma):
    cdef Py_ssize_t n = gy.shape[0], d = gy.shape[1], i, k
    cdef double s1, s2, gh
    gx_arr = np.empty((n, d))
    gg_arr = np.zeros(d)
    gb_arr = np.zeros(d)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] gg = gg_arr
    cdef double[::1] gb = gb_arr
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for k in range(d):
            gg[k] += gy[i, k] * xhat[i, k]
            gb[k] += gy[i, k]
            gh = gy[i, k] * gamma[k]
            s1 += gh
            s2 += gh * xhat[i, k]
        s1 /= d
        s2 /= d
        for k in range(d):
            gx[i, k] = (gy[i, k] * gamma[k] - s1 - xhat[i, k] * s2) * rstd[i]
    return gx_arr, gg_arr, gb_arr


def gelu_forward(x):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    flat_in = xa.reshape(-1)
    out_arr = np.empty_like(flat_in)
    cdef double[::1] src = flat_in
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, n = src.shape[0]
    cdef double v
    for i in range(n):
        v = src[i]
        out[i] = 0.5 * v * (1.0 + tanh(GELU_C * (v + GELU_A * v * v * v)))
    return out_arr.reshape(xa.shape)


def gelu_backward(x, gy):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    ga = np.ascontiguousarray(gy, dtype=np.float64)
    out_arr = np.empty(xa.size)
    cdef double[::1] src = xa.reshape(-1)
    cdef double[::1] g = ga.reshape(-1)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, n = src.shape[0]
    cdef double v, t, dt
    for i in range(n):
        v = src[i]
        t = tanh(GELU_C * (v + GELU_A * v * v * v))
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        out[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt)
    return out_arr.reshape(xa.shape)


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, k
    cdef double m, s
    y_arr = np.empty((n, d))
    cdef double[:, ::1] y = y_arr
    for i in range(n):
        m = x[i, 0]
        for k in range(1, d):
            if x[i, k] > m:
                m = x[i, k]
        s = 0.0
        for k in range(d):
            y[i, k] = exp(x[i, k] - m)
            s += y[i, k]
        for k in range(d):
            y[i, k] /= s
    return y_arr


def softmax_rows_backward(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, k
    cdef double dot
    gx_arr = np.empty((n, d))
    cdef double[:, ::1] gx = gx_arr
    for i in range(n):
        dot = 0.0
        for k in range(d):
            dot += gy[i, k] * y[i, k]
        for k in range(d):
            gx[i, k] = y[i, k] * (gy[i, k] - dot)
    return gx_arr


def scatter_add_rows(long[::1] ids, double[:, ::1] rows, Py_ssize_t n_rows):
    cdef Py_ssize_t m = rows.shape[0], d = rows.shape[1], i, k, r
    out_arr = np.zeros((n_rows, d))
    cdef double[:, ::1] out = out_arr
    for i in range(m):
        r = ids[i]
        for k in range(d):
            out[r, k] += rows[i, k]
    return out_arr
