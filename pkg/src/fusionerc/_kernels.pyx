# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled patch-extraction kernels for 2-D convolution.

Layouts match the pure-numpy versions in ``kernels.py``:
columns are (C*kh*kw, N*Ho*Wo), row index ``(c*kh + i)*kw + j``,
column index ``(n*Ho + y)*Wo + x``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _first_valid(Py_ssize_t j, Py_ssize_t pad, Py_ssize_t stride) nogil:
    # smallest output x with x*stride + j - pad >= 0
    if j >= pad:
        return 0
    return (pad - j + stride - 1) // stride


cdef inline Py_ssize_t _end_valid(Py_ssize_t j, Py_ssize_t pad, Py_ssize_t stride,
                                  Py_ssize_t w, Py_ssize_t wo) nogil:
    # one past the largest output x with x*stride + j - pad < w
    cdef Py_ssize_t lim = w + pad - j
    if lim <= 0:
        return 0
    lim = (lim - 1) // stride + 1
    return lim if lim < wo else wo


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    out_arr = np.empty((c * kh * kw, n * ho * wo), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, xx, row, iy, lo, hi
    cdef double* dst
    cdef const double* src
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    lo = _first_valid(j, pad, stride)
                    hi = _end_valid(j, pad, stride, w, wo)
                    if hi < lo:
                        hi = lo
                    for b in range(n):
                        for y in range(ho):
                            dst = &out[row, (b * ho + y) * wo]
                            iy = y * stride + i - pad
                            if iy < 0 or iy >= h:
                                for xx in range(wo):
                                    dst[xx] = 0.0
                                continue
                            src = &x[b, ch, iy, 0]
                            for xx in range(lo):
                                dst[xx] = 0.0
                            for xx in range(lo, hi):
                                dst[xx] = src[xx * stride + j - pad]
                            for xx in range(hi, wo):
                                dst[xx] = 0.0
    return out_arr


def col2im(const double[:, ::1] cols, tuple shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, xx, row, iy, lo, hi
    cdef double* dst
    cdef const double* src
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    lo = _first_valid(j, pad, stride)
                    hi = _end_valid(j, pad, stride, w, wo)
                    for b in range(n):
                        for y in range(ho):
                            iy = y * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            src = &cols[row, (b * ho + y) * wo]
                            dst = &out[b, ch, iy, 0]
                            for xx in range(lo, hi):
                                dst[xx * stride + j - pad] += src[xx]
    return out_arr
