# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Mirrors ``_kernels_py`` function by function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef double JVS_EPS = 1e-8
cdef double LN_EPS = 1e-5


def cross_jaccard_forward(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], n = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    w_arr = np.empty((m, n))
    den_arr = np.empty((m, n))
    sa_arr = np.empty(m)
    sb_arr = np.empty(n)
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] den = den_arr
    cdef double[::1] sa = sa_arr
    cdef double[::1] sb = sb_arr
    for i in range(m):
        acc = 0.0
        for k in range(d):
            acc += a[i, k] * a[i, k]
        sa[i] = acc
    for j in range(n):
        acc = 0.0
        for k in range(d):
            acc += b[j, k] * b[j, k]
        sb[j] = acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc += a[i, k] * b[j, k]
            den[i, j] = sa[i] + sb[j] + JVS_EPS
            w[i, j] = 2.0 * acc / den[i, j]
    return w_arr, den_arr


def cross_jaccard_backward(const double[:, ::1] dw, const double[:, ::1] a,
                           const double[:, ::1] b, const double[:, ::1] w,
                           const double[:, ::1] den):
    cdef Py_ssize_t m = a.shape[0], n = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double dg, dd
    da_arr = np.zeros((m, d))
    db_arr = np.zeros((n, d))
    ra_arr = np.zeros(m)
    rb_arr = np.zeros(n)
    cdef double[:, ::1] da = da_arr
    cdef double[:, ::1] db = db_arr
    cdef double[::1] ra = ra_arr
    cdef double[::1] rb = rb_arr
    for i in range(m):
        for j in range(n):
            dg = 2.0 * dw[i, j] / den[i, j]
            dd = -w[i, j] * dw[i, j] / den[i, j]
            ra[i] += dd
            rb[j] += dd
            for k in range(d):
                da[i, k] += dg * b[j, k]
                db[j, k] += dg * a[i, k]
    for i in range(m):
        for k in range(d):
            da[i, k] += 2.0 * ra[i] * a[i, k]
    for j in range(n):
        for k in range(d):
            db[j, k] += 2.0 * rb[j] * b[j, k]
    return da_arr, db_arr


def bilinear_forward(const double[::1] h, const double[:, :, ::1] w,
                     const double[:, ::1] o):
    cdef Py_ssize_t d = h.shape[0], n = o.shape[0]
    cdef Py_ssize_t j, k, r
    cdef double acc
    # the d^3 contraction is memory bound; BLAS gemv streams it faster than a loop
    t_arr = np.dot(np.asarray(h), np.asarray(w).reshape(d, d * d)).reshape(d, d)
    out_arr = np.empty((n, d))
    cdef double[:, ::1] t = t_arr
    cdef double[:, ::1] out = out_arr
    for r in range(n):
        for k in range(d):
            out[r, k] = 0.0
        for j in range(d):
            acc = o[r, j]
            for k in range(d):
                out[r, k] += acc * t[j, k]
    return out_arr, t_arr


def bilinear_backward(const double[:, ::1] dout, const double[::1] h,
                      const double[:, :, ::1] w, const double[:, ::1] o,
                      const double[:, ::1] t):
    cdef Py_ssize_t d = h.shape[0], n = o.shape[0], dd = d * d
    cdef Py_ssize_t i, j, k, r, m
    cdef double acc, hi, orj
    dt_arr = np.zeros((d, d))
    dh_arr = np.empty(d)
    dw_arr = np.empty((d, d, d))
    do_arr = np.empty((n, d))
    cdef double[:, ::1] dt = dt_arr
    cdef double[::1] dh = dh_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[:, ::1] do = do_arr
    for r in range(n):
        for j in range(d):
            orj = o[r, j]
            for k in range(d):
                dt[j, k] += orj * dout[r, k]
    cdef const double* dtp = &dt[0, 0]
    cdef const double* wp = &w[0, 0, 0]
    cdef double* dwp = &dw[0, 0, 0]
    for i in range(d):
        hi = h[i]
        acc = 0.0
        for m in range(dd):
            acc += wp[i * dd + m] * dtp[m]
            dwp[i * dd + m] = hi * dtp[m]
        dh[i] = acc
    for r in range(n):
        for j in range(d):
            acc = 0.0
            for k in range(d):
                acc += dout[r, k] * t[j, k]
            do[r, j] = acc
    return dh_arr, dw_arr, do_arr


def max_pool_forward(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t r, c, best
    out_arr = np.empty(d)
    idx_arr = np.empty(d, dtype=np.intp)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t[::1] idx = idx_arr
    for c in range(d):
        best = 0
        for r in range(1, n):
            # strict comparison keeps the lowest row on ties
            if x[r, c] > x[best, c]:
                best = r
        idx[c] = best
        out[c] = x[best, c]
    return out_arr, idx_arr


def max_pool_backward(const double[::1] dout, const Py_ssize_t[::1] idx, Py_ssize_t n):
    cdef Py_ssize_t d = dout.shape[0], c
    dx_arr = np.zeros((n, d))
    cdef double[:, ::1] dx = dx_arr
    for c in range(d):
        dx[idx[c], c] = dout[c]
    return dx_arr


def layer_norm_forward(const double[:, ::1] x, const double[::1] gain,
                       const double[::1] shift):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t r, c
    cdef double mu, var, dev
    out_arr = np.empty((n, d))
    xhat_arr = np.empty((n, d))
    inv_arr = np.empty(n)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv = inv_arr
    for r in range(n):
        mu = 0.0
        for c in range(d):
            mu += x[r, c]
        mu /= d
        var = 0.0
        for c in range(d):
            dev = x[r, c] - mu
            var += dev * dev
        var /= d
        inv[r] = 1.0 / sqrt(var + LN_EPS)
        for c in range(d):
            xhat[r, c] = (x[r, c] - mu) * inv[r]
            out[r, c] = xhat[r, c] * gain[c] + shift[c]
    return out_arr, xhat_arr, inv_arr


def layer_norm_backward(const double[:, ::1] dout, const double[:, ::1] xhat,
                        const double[::1] inv, const double[::1] gain):
    cdef Py_ssize_t n = xhat.shape[0], d = xhat.shape[1]
    cdef Py_ssize_t r, c
    cdef double s1, s2, g
    dx_arr = np.empty((n, d))
    dgain_arr = np.zeros(d)
    dshift_arr = np.zeros(d)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr
    cdef double[::1] dshift = dshift_arr
    for r in range(n):
        s1 = 0.0
        s2 = 0.0
        for c in range(d):
            g = dout[r, c] * gain[c]
            s1 += g
            s2 += g * xhat[r, c]
            dgain[c] += dout[r, c] * xhat[r, c]
            dshift[c] += dout[r, c]
        for c in range(d):
            dx[r, c] = (inv[r] / d) * (d * dout[r, c] * gain[c] - s1 - xhat[r, c] * s2)
    return dx_arr, dgain_arr, dshift_arr
