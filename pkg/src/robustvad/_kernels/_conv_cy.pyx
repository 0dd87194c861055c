# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv2d kernels. Same contracts as _conv_np (NHWC float64).

All three kernels keep the output-channel axis innermost, which is the
contiguous axis of w, y and gy, so the hot loops stream over memory and
auto-vectorize.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


DEF ACC_CAP = 128


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   b, int stride, int pad):
    cdef Py_ssize_t bsz = x.shape[0], h = x.shape[1], wd = x.shape[2], ci = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    y_arr = np.zeros((bsz, ho, wo, co), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef double[::1] bias
    cdef bint has_bias = b is not None
    if has_bias:
        bias = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n, oy, ox, ky, kx, c, f, iy, ix
    cdef double xv
    cdef double acc[ACC_CAP]
    cdef bint small = co <= ACC_CAP
    for n in range(bsz):
        for oy in range(ho):
            for ox in range(wo):
                if small:
                    for f in range(co):
                        acc[f] = bias[f] if has_bias else 0.0
                elif has_bias:
                    for f in range(co):
                        y[n, oy, ox, f] = bias[f]
                for ky in range(kh):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(kw):
                        ix = ox * stride + kx - pad
                        if ix < 0 or ix >= wd:
                            continue
                        for c in range(ci):
                            xv = x[n, iy, ix, c]
                            if xv == 0.0:
                                continue
                            if small:
                                for f in range(co):
                                    acc[f] += xv * w[ky, kx, c, f]
                            else:
                                for f in range(co):
                                    y[n, oy, ox, f] += xv * w[ky, kx, c, f]
                if small:
                    for f in range(co):
                        y[n, oy, ox, f] = acc[f]
    return y_arr


def conv2d_backward_input(double[:, :, :, ::1] gy, double[:, :, :, ::1] w,
                          int stride, int pad, int height, int width):
    cdef Py_ssize_t bsz = gy.shape[0], ho = gy.shape[1], wo = gy.shape[2], co = gy.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], ci = w.shape[2]
    gx_arr = np.zeros((bsz, height, width, ci), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, oy, ox, ky, kx, c, f, iy, ix
    cdef double acc
    for n in range(bsz):
        for oy in range(ho):
            for ox in range(wo):
                for ky in range(kh):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= height:
                        continue
                    for kx in range(kw):
                        ix = ox * stride + kx - pad
                        if ix < 0 or ix >= width:
                            continue
                        for c in range(ci):
                            acc = 0.0
                            for f in range(co):
                                acc += gy[n, oy, ox, f] * w[ky, kx, c, f]
                            gx[n, iy, ix, c] += acc
    return gx_arr


def conv2d_backward_params(double[:, :, :, ::1] x, double[:, :, :, ::1] gy,
                           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t bsz = x.shape[0], h = x.shape[1], wd = x.shape[2], ci = x.shape[3]
    cdef Py_ssize_t ho = gy.shape[1], wo = gy.shape[2], co = gy.shape[3]
    gw_arr = np.zeros((kh, kw, ci, co), dtype=np.float64)
    gb_arr = np.zeros(co, dtype=np.float64)
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t n, oy, ox, ky, kx, c, f, iy, ix
    cdef double xv
    for n in range(bsz):
        for oy in range(ho):
            for ox in range(wo):
                for f in range(co):
                    gb[f] += gy[n, oy, ox, f]
                for ky in range(kh):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(kw):
                        ix = ox * stride + kx - pad
                        if ix < 0 or ix >= wd:
                            continue
                        for c in range(ci):
                            xv = x[n, iy, ix, c]
                            if xv == 0.0:
                                continue
                            for f in range(co):
                                gw[ky, kx, c, f] += xv * gy[n, oy, ox, f]
    return gw_arr, gb_arr
