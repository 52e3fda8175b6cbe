# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled compute kernels: BLAS-backed matrix contractions plus tight
loops for the membrane recursions. Drop-in replacement for the pure-numpy
kernel set; selected at import time by the backend module.

Row-major arrays are fed to Fortran dgemm by computing C^T = B^T A^T (or
the transposed variants), which avoids any copies.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


# ---------------------------------------------------------------------------
# row-major dgemm wrappers

cdef void _mm_nn(double* a, double* b, double* c, int m, int n, int k) noexcept nogil:
    # c[m,n] = a[m,k] @ b[k,n]
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "N", &n, &m, &k, &one, b, &n, a, &k, &zero, c, &n)


cdef void _mm_nt(double* a, double* b, double* c, int m, int n, int k) noexcept nogil:
    # c[m,n] = a[m,k] @ b[n,k]^T
    cdef double one = 1.0, zero = 0.0
    dgemm("T", "N", &n, &m, &k, &one, b, &k, a, &k, &zero, c, &n)


cdef void _mm_tn(double* a, double* b, double* c, int m, int n, int k) noexcept nogil:
    # c[m,n] = a[k,m]^T @ b[k,n]
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "T", &n, &m, &k, &one, b, &n, a, &m, &zero, c, &n)


cdef inline object _c64(object arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


# ---------------------------------------------------------------------------
# dense layers

def dense_forward(x, w):
    cdef double[:, ::1] xv = _c64(x)
    cdef double[:, ::1] wv = _c64(w)
    cdef int b = xv.shape[0], i = xv.shape[1], o = wv.shape[0]
    out = np.empty((b, o), dtype=np.float64)
    cdef double[:, ::1] ov = out
    if b > 0 and i > 0 and o > 0:
        with nogil:
            _mm_nt(&xv[0, 0], &wv[0, 0], &ov[0, 0], b, o, i)
    return out


def dense_grad_weight(x, grad_out):
    cdef double[:, ::1] xv = _c64(x)
    cdef double[:, ::1] gv = _c64(grad_out)
    cdef int b = xv.shape[0], i = xv.shape[1], o = gv.shape[1]
    out = np.empty((o, i), dtype=np.float64)
    cdef double[:, ::1] ov = out
    if b > 0 and i > 0 and o > 0:
        with nogil:
            _mm_tn(&gv[0, 0], &xv[0, 0], &ov[0, 0], o, i, b)
    return out


def dense_grad_input(w, grad_out):
    cdef double[:, ::1] wv = _c64(w)
    cdef double[:, ::1] gv = _c64(grad_out)
    cdef int b = gv.shape[0], o = gv.shape[1], i = wv.shape[1]
    out = np.empty((b, i), dtype=np.float64)
    cdef double[:, ::1] ov = out
    if b > 0 and i > 0 and o > 0:
        with nogil:
            _mm_nn(&gv[0, 0], &wv[0, 0], &ov[0, 0], b, i, o)
    return out


# ---------------------------------------------------------------------------
# 1-D convolution via im2col

cdef void _fill_cols(double[:, :, ::1] xv, double[:, ::1] cols,
                     int kernel_size, int stride) noexcept nogil:
    cdef int b, t, ci, kk
    cdef int batch = xv.shape[0], chans = xv.shape[1]
    cdef int out_len = cols.shape[0] / batch
    for b in range(batch):
        for t in range(out_len):
            for ci in range(chans):
                for kk in range(kernel_size):
                    cols[b * out_len + t, ci * kernel_size + kk] = \
                        xv[b, ci, t * stride + kk]


def conv1d_forward(x, kernel, stride):
    cdef double[:, :, ::1] xv = _c64(x)
    cdef double[:, :, ::1] kv = _c64(kernel)
    cdef int batch = xv.shape[0], chans = xv.shape[1], length = xv.shape[2]
    cdef int co = kv.shape[0], kernel_size = kv.shape[2]
    cdef int st = stride
    cdef int out_len = (length - kernel_size) // st + 1
    cdef int rows = batch * out_len, width = chans * kernel_size

    cols = np.empty((rows, width), dtype=np.float64)
    cdef double[:, ::1] colv = cols
    flat = np.empty((rows, co), dtype=np.float64)
    cdef double[:, ::1] fv = flat
    cdef double[:, ::1] k2 = _c64(np.asarray(kernel).reshape(co, width))
    out = np.empty((batch, co, out_len), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef int b, t, c
    with nogil:
        _fill_cols(xv, colv, kernel_size, st)
        _mm_nt(&colv[0, 0], &k2[0, 0], &fv[0, 0], rows, co, width)
        for b in range(batch):
            for c in range(co):
                for t in range(out_len):
                    ov[b, c, t] = fv[b * out_len + t, c]
    return out


def conv1d_grad_kernel(x, grad_out, stride, kernel_size):
    cdef double[:, :, ::1] xv = _c64(x)
    cdef double[:, :, ::1] gv = _c64(grad_out)
    cdef int batch = xv.shape[0], chans = xv.shape[1]
    cdef int co = gv.shape[1], out_len = gv.shape[2]
    cdef int st = stride
    cdef int ksz = kernel_size
    cdef int rows = batch * out_len, width = chans * ksz

    cols = np.empty((rows, width), dtype=np.float64)
    cdef double[:, ::1] colv = cols
    gom = np.empty((rows, co), dtype=np.float64)
    cdef double[:, ::1] gmv = gom
    grad = np.empty((co, width), dtype=np.float64)
    cdef double[:, ::1] gkv = grad
    cdef int b, t, c
    with nogil:
        _fill_cols(xv, colv, ksz, st)
        for b in range(batch):
            for c in range(co):
                for t in range(out_len):
                    gmv[b * out_len + t, c] = gv[b, c, t]
        _mm_tn(&gmv[0, 0], &colv[0, 0], &gkv[0, 0], co, width, rows)
    return grad.reshape(co, chans, ksz)


def conv1d_grad_input(kernel, grad_out, stride, input_length):
    cdef double[:, :, ::1] kv = _c64(kernel)
    cdef double[:, :, ::1] gv = _c64(grad_out)
    cdef int co = kv.shape[0], chans = kv.shape[1], kernel_size = kv.shape[2]
    cdef int batch = gv.shape[0], out_len = gv.shape[2]
    cdef int st = stride, length = input_length
    cdef int rows = batch * out_len, width = chans * kernel_size

    gom = np.empty((rows, co), dtype=np.float64)
    cdef double[:, ::1] gmv = gom
    gcols = np.empty((rows, width), dtype=np.float64)
    cdef double[:, ::1] gcv = gcols
    cdef double[:, ::1] k2 = _c64(np.asarray(kernel).reshape(co, width))
    gx = np.zeros((batch, chans, length), dtype=np.float64)
    cdef double[:, :, ::1] gxv = gx
    cdef int b, t, c, ci, kk
    with nogil:
        for b in range(batch):
            for c in range(co):
                for t in range(out_len):
                    gmv[b * out_len + t, c] = gv[b, c, t]
        _mm_nn(&gmv[0, 0], &k2[0, 0], &gcv[0, 0], rows, width, co)
        for b in range(batch):
            for t in range(out_len):
                for ci in range(chans):
                    for kk in range(kernel_size):
                        gxv[b, ci, t * st + kk] += \
                            gcv[b * out_len + t, ci * kernel_size + kk]
    return gx


# ---------------------------------------------------------------------------
# membrane recursions

def lif_forward(drive, leak, threshold):
    cdef double[:, ::1] zv = _c64(drive)
    cdef int steps = zv.shape[0], units = zv.shape[1]
    cdef double lam = leak, th = threshold, keep = 1.0 - leak
    v = np.empty((steps, units), dtype=np.float64)
    s = np.empty((steps, units), dtype=np.float64)
    u = np.empty((steps, units), dtype=np.float64)
    cdef double[:, ::1] vv = v, sv = s, uv = u
    cdef int t, r
    cdef double prev, vt
    with nogil:
        for r in range(units):
            prev = 0.0
            for t in range(steps):
                vt = keep * prev + lam * zv[t, r]
                vv[t, r] = vt
                if vt >= th:
                    sv[t, r] = 1.0
                    prev = 0.0
                else:
                    sv[t, r] = 0.0
                    prev = vt
                uv[t, r] = prev
    return v, s, u


def lif_backward(v, gates, grad_spikes, leak, threshold, eta):
    cdef double[:, ::1] vv = _c64(v)
    cdef double[:, ::1] gatev = _c64(gates)
    cdef double[:, ::1] gsv = _c64(grad_spikes)
    cdef int steps = vv.shape[0], units = vv.shape[1]
    cdef double lam = leak, th = threshold, keep = 1.0 - leak
    cdef double half_eta = 0.5 * eta
    cdef double slope_scale = 1.5707963267948966 * eta  # pi * eta / 2
    gz = np.empty((steps, units), dtype=np.float64)
    cdef double[:, ::1] gzv = gz
    cdef int t, r
    cdef double carry, arg, sg
    with nogil:
        for r in range(units):
            carry = 0.0
            for t in range(steps - 1, -1, -1):
                arg = slope_scale * (vv[t, r] - th)
                sg = half_eta / (1.0 + arg * arg)
                carry = gsv[t, r] * sg + keep * (1.0 - gatev[t, r]) * carry
                gzv[t, r] = lam * carry
    return gz
