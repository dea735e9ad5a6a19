# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused single-pass kernels. Same signatures and semantics as ``_numpy``."""
import numpy as np

from libc.math cimport exp, sqrt, fabs, pow, INFINITY

NAME = "native"


def layer_norm_fwd(const double[:, ::1] x, const double[::1] gain, const double[::1] shift, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out = np.empty((n, d))
    xhat = np.empty((n, d))
    rstd = np.empty(n)
    cdef double[:, ::1] o = out
    cdef double[:, ::1] xh = xhat
    cdef double[::1] rs = rstd
    cdef double mean, var, r, c
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(d):
                mean = mean + x[i, j]
            mean = mean / d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mean
                var = var + c * c
            var = var / d
            r = 1.0 / sqrt(var + eps)
            rs[i] = r
            for j in range(d):
                c = (x[i, j] - mean) * r
                xh[i, j] = c
                o[i, j] = c * gain[j] + shift[j]
    return out, xhat, rstd


def layer_norm_bwd(const double[:, ::1] gout, const double[:, ::1] xhat, const double[::1] rstd,
                   const double[::1] gain):
    cdef Py_ssize_t n = gout.shape[0], d = gout.shape[1], i, j
    gx = np.empty((n, d))
    ggain = np.zeros(d)
    gshift = np.zeros(d)
    cdef double[:, ::1] gxv = gx
    cdef double[::1] gg = ggain
    cdef double[::1] gs = gshift
    cdef double a, b, gh
    with nogil:
        for i in range(n):
            a = 0.0
            b = 0.0
            for j in range(d):
                gh = gout[i, j] * gain[j]
                a = a + gh
                b = b + gh * xhat[i, j]
                gg[j] = gg[j] + gout[i, j] * xhat[i, j]
                gs[j] = gs[j] + gout[i, j]
            a = a / d
            b = b / d
            for j in range(d):
                gxv[i, j] = rstd[i] * (gout[i, j] * gain[j] - a - xhat[i, j] * b)
    return gx, ggain, gshift


def softmax_fwd(const double[:, ::1] x, const unsigned char[:, ::1] mask=None, Py_ssize_t rows_per_mask=1):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j, mi
    y = np.empty((n, d))
    cdef double[:, ::1] yv = y
    cdef double mx, s, e
    cdef bint masked = mask is not None
    with nogil:
        for i in range(n):
            mi = i // rows_per_mask
            mx = -INFINITY
            for j in range(d):
                if (not masked or mask[mi, j]) and x[i, j] > mx:
                    mx = x[i, j]
            if mx == -INFINITY:
                mx = 0.0
            s = 0.0
            for j in range(d):
                if not masked or mask[mi, j]:
                    e = exp(x[i, j] - mx)
                else:
                    e = 0.0
                yv[i, j] = e
                s = s + e
            if s == 0.0:
                s = 1.0
            for j in range(d):
                yv[i, j] = yv[i, j] / s
    return y


def softmax_bwd(const double[:, ::1] gy, const double[:, ::1] y):
    cdef Py_ssize_t n = gy.shape[0], d = gy.shape[1], i, j
    gx = np.empty((n, d))
    cdef double[:, ::1] g = gx
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot = dot + gy[i, j] * y[i, j]
            for j in range(d):
                g[i, j] = y[i, j] * (gy[i, j] - dot)
    return gx


def adam_update(double[::1] theta, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double b1, double b2, double eps, long t):
    cdef Py_ssize_t n = theta.shape[0], i
    cdef double c1 = 1.0 - pow(b1, t), c2 = 1.0 - pow(b2, t)
    cdef double mhat, vhat
    with nogil:
        for i in range(n):
            m[i] = m[i] * b1 + (1.0 - b1) * g[i]
            v[i] = v[i] * b2 + (1.0 - b2) * g[i] * g[i]
            mhat = m[i] / c1
            vhat = v[i] / c2
            theta[i] = theta[i] - lr * mhat / (sqrt(vhat) + eps)


def nadam_update(double[::1] theta, const double[::1] g, double[::1] m, double[::1] v,
                 double lr, double b1, double b2, double eps, long t):
    cdef Py_ssize_t n = theta.shape[0], i
    cdef double c1 = 1.0 - pow(b1, t), c1n = 1.0 - pow(b1, t + 1), c2 = 1.0 - pow(b2, t)
    cdef double mbar, vhat
    with nogil:
        for i in range(n):
            m[i] = m[i] * b1 + (1.0 - b1) * g[i]
            v[i] = v[i] * b2 + (1.0 - b2) * g[i] * g[i]
            mbar = b1 * m[i] / c1n + (1.0 - b1) * g[i] / c1
            vhat = v[i] / c2
            theta[i] = theta[i] - lr * mbar / (sqrt(vhat) + eps)


def adamax_update(double[::1] theta, const double[::1] g, double[::1] m, double[::1] u,
                  double lr, double b1, double b2, double eps, long t):
    cdef Py_ssize_t n = theta.shape[0], i
    cdef double step = lr / (1.0 - pow(b1, t))
    cdef double a, den
    with nogil:
        for i in range(n):
            m[i] = m[i] * b1 + (1.0 - b1) * g[i]
            a = fabs(g[i])
            u[i] = b2 * u[i] if b2 * u[i] > a else a
            den = u[i] if u[i] > eps else eps
            theta[i] = theta[i] - step * m[i] / den
