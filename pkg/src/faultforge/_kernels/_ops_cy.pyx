# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward kernels.

Same accumulation contract as the pure-Python backend (see _ops_py): float32
accumulators, bias first, kernel-column-major summation with the input
channel innermost, materialized zero padding, NaN-winning max pooling.
Compiled with -ffp-contract=off so no FMA changes the rounding sequence.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d(cnp.ndarray[cnp.float32_t, ndim=3] x,
           cnp.ndarray[cnp.float32_t, ndim=4] w,
           cnp.ndarray[cnp.float32_t, ndim=1] b,
           int stride, int padding):
    cdef Py_ssize_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t h_out = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t w_out = (wd + 2 * padding - kw) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out_arr = np.empty((c_out, h_out, w_out), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] xv = np.ascontiguousarray(x)
    cdef cnp.float32_t[:, :, :, ::1] wv = np.ascontiguousarray(w)
    cdef cnp.float32_t[::1] bv = np.ascontiguousarray(b)
    cdef cnp.float32_t[:, :, ::1] ov = out_arr
    cdef Py_ssize_t o, oh, ow, i, j, c
    cdef cnp.float32_t acc
    with nogil:
        for o in range(c_out):
            for oh in range(h_out):
                for ow in range(w_out):
                    acc = bv[o]
                    for j in range(kw):
                        for i in range(kh):
                            for c in range(c_in):
                                acc = acc + wv[o, c, i, j] * xv[c, oh * stride + i, ow * stride + j]
                    ov[o, oh, ow] = acc
    return out_arr


def conv3d(cnp.ndarray[cnp.float32_t, ndim=4] x,
           cnp.ndarray[cnp.float32_t, ndim=5] w,
           cnp.ndarray[cnp.float32_t, ndim=1] b,
           int stride, int padding):
    cdef Py_ssize_t c_in = x.shape[0], d = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], kd = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t d_out = (d + 2 * padding - kd) // stride + 1
    cdef Py_ssize_t h_out = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t w_out = (wd + 2 * padding - kw) // stride + 1
    if padding:
        p = (padding, padding)
        x = np.pad(x, ((0, 0), p, p, p))
    out_arr = np.empty((c_out, d_out, h_out, w_out), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, ::1] xv = np.ascontiguousarray(x)
    cdef cnp.float32_t[:, :, :, :, ::1] wv = np.ascontiguousarray(w)
    cdef cnp.float32_t[::1] bv = np.ascontiguousarray(b)
    cdef cnp.float32_t[:, :, :, ::1] ov = out_arr
    cdef Py_ssize_t o, od, oh, ow, i, j, k, c
    cdef cnp.float32_t acc
    with nogil:
        for o in range(c_out):
            for od in range(d_out):
                for oh in range(h_out):
                    for ow in range(w_out):
                        acc = bv[o]
                        for j in range(kw):
                            for i in range(kh):
                                for k in range(kd):
                                    for c in range(c_in):
                                        acc = acc + wv[o, c, k, i, j] * xv[c, od * stride + k, oh * stride + i, ow * stride + j]
                        ov[o, od, oh, ow] = acc
    return out_arr


def linear(cnp.ndarray[cnp.float32_t, ndim=1] x,
           cnp.ndarray[cnp.float32_t, ndim=2] w,
           cnp.ndarray[cnp.float32_t, ndim=1] b):
    cdef Py_ssize_t n_in = x.shape[0], n_out = w.shape[0]
    out_arr = np.empty(n_out, dtype=np.float32)
    cdef cnp.float32_t[::1] xv = np.ascontiguousarray(x)
    cdef cnp.float32_t[:, ::1] wv = np.ascontiguousarray(w)
    cdef cnp.float32_t[::1] bv = np.ascontiguousarray(b)
    cdef cnp.float32_t[::1] ov = out_arr
    cdef Py_ssize_t o, i
    cdef cnp.float32_t acc
    with nogil:
        for o in range(n_out):
            acc = bv[o]
            for i in range(n_in):
                acc = acc + wv[o, i] * xv[i]
            ov[o] = acc
    return out_arr


def maxpool2d(cnp.ndarray[cnp.float32_t, ndim=3] x, int k, int stride):
    cdef Py_ssize_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t h_out = (h - k) // stride + 1
    cdef Py_ssize_t w_out = (wd - k) // stride + 1
    out_arr = np.empty((c_in, h_out, w_out), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] xv = np.ascontiguousarray(x)
    cdef cnp.float32_t[:, :, ::1] ov = out_arr
    cdef Py_ssize_t c, oh, ow, i, j
    cdef cnp.float32_t m, v
    with nogil:
        for c in range(c_in):
            for oh in range(h_out):
                for ow in range(w_out):
                    m = xv[c, oh * stride, ow * stride]
                    for i in range(k):
                        for j in range(k):
                            if i == 0 and j == 0:
                                continue
                            v = xv[c, oh * stride + i, ow * stride + j]
                            if v != v or v > m:
                                m = v
                    ov[c, oh, ow] = m
    return out_arr
