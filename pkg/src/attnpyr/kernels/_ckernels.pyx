# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: direct-loop convolution and pooling.

Mirrors kernels.reference call for call. Loops are arranged so the inner
loop walks rows contiguously (with a dedicated stride-1 path the C
compiler can vectorize); at the small feature-map sizes this model runs
on, that beats the im2col route.
"""

import numpy as np

cimport numpy as cnp  # noqa: F401  (activates numpy C-API includes)


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t stride) noexcept nogil:
    # smallest t >= 0 with t*stride + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t n,
                           Py_ssize_t limit) noexcept nogil:
    # one past the largest t < n with t*stride + off <= limit - 1
    cdef Py_ssize_t top = limit - 1 - off
    if top < 0:
        return 0
    top = top // stride + 1
    return top if top < n else n


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   int stride, int pad):
    cdef Py_ssize_t b_n = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - k) // stride + 1
    out_arr = np.zeros((b_n, cout, ho, wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, co, ci, i, j, u, v, ii, jlo, jhi, joff
    cdef double wc
    with nogil:
        for b in range(b_n):
            for co in range(cout):
                for ci in range(cin):
                    for u in range(k):
                        for v in range(k):
                            wc = w[co, ci, u, v]
                            joff = v - pad
                            jlo = _lo(joff, stride)
                            jhi = _hi(joff, stride, wo, wd)
                            for i in range(_lo(u - pad, stride),
                                           _hi(u - pad, stride, ho, h)):
                                ii = i * stride + u - pad
                                if stride == 1:
                                    for j in range(jlo, jhi):
                                        out[b, co, i, j] += wc * x[b, ci, ii, j + joff]
                                else:
                                    for j in range(jlo, jhi):
                                        out[b, co, i, j] += wc * x[b, ci, ii, j * stride + joff]
    return out_arr


def conv2d_backward_input(double[:, :, :, ::1] dy, double[:, :, :, ::1] w,
                          int stride, int pad, Py_ssize_t h, Py_ssize_t wd):
    cdef Py_ssize_t b_n = dy.shape[0], cout = dy.shape[1]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t cin = w.shape[1], k = w.shape[2]
    dx_arr = np.zeros((b_n, cin, h, wd))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, co, ci, i, j, u, v, ii, jlo, jhi, joff
    cdef double wc
    with nogil:
        for b in range(b_n):
            for ci in range(cin):
                for co in range(cout):
                    for u in range(k):
                        for v in range(k):
                            wc = w[co, ci, u, v]
                            joff = v - pad
                            jlo = _lo(joff, stride)
                            jhi = _hi(joff, stride, wo, wd)
                            for i in range(_lo(u - pad, stride),
                                           _hi(u - pad, stride, ho, h)):
                                ii = i * stride + u - pad
                                if stride == 1:
                                    for j in range(jlo, jhi):
                                        dx[b, ci, ii, j + joff] += wc * dy[b, co, i, j]
                                else:
                                    for j in range(jlo, jhi):
                                        dx[b, ci, ii, j * stride + joff] += wc * dy[b, co, i, j]
    return dx_arr


def conv2d_backward_weight(double[:, :, :, ::1] dy, double[:, :, :, ::1] x,
                           int stride, int pad, Py_ssize_t k):
    cdef Py_ssize_t b_n = dy.shape[0], cout = dy.shape[1]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    dw_arr = np.zeros((cout, cin, k, k))
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, co, ci, i, j, u, v, ii, jlo, jhi, joff
    cdef double acc
    with nogil:
        for co in range(cout):
            for ci in range(cin):
                for u in range(k):
                    for v in range(k):
                        acc = 0.0
                        joff = v - pad
                        jlo = _lo(joff, stride)
                        jhi = _hi(joff, stride, wo, wd)
                        for b in range(b_n):
                            for i in range(_lo(u - pad, stride),
                                           _hi(u - pad, stride, ho, h)):
                                ii = i * stride + u - pad
                                if stride == 1:
                                    for j in range(jlo, jhi):
                                        acc += dy[b, co, i, j] * x[b, ci, ii, j + joff]
                                else:
                                    for j in range(jlo, jhi):
                                        acc += dy[b, co, i, j] * x[b, ci, ii, j * stride + joff]
                        dw[co, ci, u, v] = acc
    return dw_arr


def avg_pool2d_forward(double[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t b_n = x.shape[0], c_n = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (wd - k) // stride + 1
    out_arr = np.zeros((b_n, c_n, ho, wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double inv = 1.0 / (k * k)
    cdef Py_ssize_t b, c, i, j, u, v
    cdef double acc
    with nogil:
        for b in range(b_n):
            for c in range(c_n):
                for i in range(ho):
                    for j in range(wo):
                        acc = 0.0
                        for u in range(k):
                            for v in range(k):
                                acc += x[b, c, i * stride + u, j * stride + v]
                        out[b, c, i, j] = acc * inv
    return out_arr


def avg_pool2d_backward(double[:, :, :, ::1] dy, int k, int stride,
                        Py_ssize_t h, Py_ssize_t wd):
    cdef Py_ssize_t b_n = dy.shape[0], c_n = dy.shape[1]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    dx_arr = np.zeros((b_n, c_n, h, wd))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double inv = 1.0 / (k * k)
    cdef Py_ssize_t b, c, i, j, u, v
    cdef double g
    with nogil:
        for b in range(b_n):
            for c in range(c_n):
                for i in range(ho):
                    for j in range(wo):
                        g = dy[b, c, i, j] * inv
                        for u in range(k):
                            for v in range(k):
                                dx[b, c, i * stride + u, j * stride + v] += g
    return dx_arr
