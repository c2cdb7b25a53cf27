# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: im2col / col2im, training-mode batch norm, max pooling.

Column layout is (C*k*k, N*Ho*Wo) with rows ordered (c, kh, kw) and columns
ordered (n, ho, wo). Padding is handled implicitly (out-of-range taps read 0).
col2im accumulates contributions per pixel in (kh, kw) order so it matches the
numpy fallback bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k, int stride, int padding, int ho, int wo):
    cdef Py_ssize_t n_batch = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t n, c, kh, kw, oh, ow, ih, iw, row, col
    dtype = np.float32 if real is float else np.float64
    out = np.empty((chans * k * k, n_batch * ho * wo), dtype=dtype)
    cdef real[:, ::1] cols = out
    with nogil:
        for c in range(chans):
            for kh in range(k):
                for kw in range(k):
                    row = (c * k + kh) * k + kw
                    col = 0
                    for n in range(n_batch):
                        for oh in range(ho):
                            ih = oh * stride + kh - padding
                            if ih < 0 or ih >= h:
                                for ow in range(wo):
                                    cols[row, col] = 0
                                    col += 1
                                continue
                            for ow in range(wo):
                                iw = ow * stride + kw - padding
                                if iw < 0 or iw >= w:
                                    cols[row, col] = 0
                                else:
                                    cols[row, col] = x[n, c, ih, iw]
                                col += 1
    return out


def col2im(real[:, ::1] cols, int n_batch, int chans, int h, int w,
           int k, int stride, int padding, int ho, int wo):
    cdef Py_ssize_t n, c, kh, kw, oh, ow, ih, iw, row, col
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_batch, chans, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    with nogil:
        for c in range(chans):
            for kh in range(k):
                for kw in range(k):
                    row = (c * k + kh) * k + kw
                    col = 0
                    for n in range(n_batch):
                        for oh in range(ho):
                            ih = oh * stride + kh - padding
                            if ih < 0 or ih >= h:
                                col += wo
                                continue
                            for ow in range(wo):
                                iw = ow * stride + kw - padding
                                if iw >= 0 and iw < w:
                                    dx[n, c, ih, iw] += cols[row, col]
                                col += 1
    return out


def bn_forward_train(real[:, :, :, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    """Batch statistics (accumulated in double) and the normalized output."""
    cdef Py_ssize_t n_batch = x.shape[0], chans = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t n, c, i, j
    cdef double m = n_batch * h * w, s, d, mu, var, inv
    cdef real g, b, xh
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((n_batch, chans, h, w), dtype=dtype)
    xhat_arr = np.empty((n_batch, chans, h, w), dtype=dtype)
    mean_arr = np.empty(chans, dtype=np.float64)
    var_arr = np.empty(chans, dtype=np.float64)
    inv_arr = np.empty(chans, dtype=np.float64)
    cdef real[:, :, :, ::1] y = y_arr
    cdef real[:, :, :, ::1] xhat = xhat_arr
    cdef double[::1] mean = mean_arr, variance = var_arr, inv_std = inv_arr
    with nogil:
        for c in range(chans):
            s = 0
            for n in range(n_batch):
                for i in range(h):
                    for j in range(w):
                        s = s + x[n, c, i, j]
            mu = s / m
            s = 0
            for n in range(n_batch):
                for i in range(h):
                    for j in range(w):
                        d = x[n, c, i, j] - mu
                        s = s + d * d
            var = s / m
            inv = 1.0 / sqrt(var + eps)
            mean[c] = mu
            variance[c] = var
            inv_std[c] = inv
            g = gamma[c]
            b = beta[c]
            for n in range(n_batch):
                for i in range(h):
                    for j in range(w):
                        xh = <real>((x[n, c, i, j] - mu) * inv)
                        xhat[n, c, i, j] = xh
                        y[n, c, i, j] = xh * g + b
    return y_arr, xhat_arr, mean_arr, var_arr, inv_arr


def bn_backward_train(real[:, :, :, ::1] grad, real[:, :, :, ::1] xhat, real[::1] gamma, double[::1] inv_std):
    cdef Py_ssize_t n_batch = grad.shape[0], chans = grad.shape[1], h = grad.shape[2], w = grad.shape[3]
    cdef Py_ssize_t n, c, i, j
    cdef double m = n_batch * h * w, sg, sgx, scale
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((n_batch, chans, h, w), dtype=dtype)
    dgamma_arr = np.empty(chans, dtype=dtype)
    dbeta_arr = np.empty(chans, dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef real[::1] dgamma = dgamma_arr, dbeta = dbeta_arr
    with nogil:
        for c in range(chans):
            sg = 0
            sgx = 0
            for n in range(n_batch):
                for i in range(h):
                    for j in range(w):
                        sg = sg + grad[n, c, i, j]
                        sgx = sgx + grad[n, c, i, j] * xhat[n, c, i, j]
            dgamma[c] = <real>sgx
            dbeta[c] = <real>sg
            scale = gamma[c] * inv_std[c] / m
            for n in range(n_batch):
                for i in range(h):
                    for j in range(w):
                        dx[n, c, i, j] = <real>(scale * (m * grad[n, c, i, j] - sg - xhat[n, c, i, j] * sgx))
    return dx_arr, dgamma_arr, dbeta_arr


def maxpool_forward(real[:, :, :, ::1] x, int k):
    """Non-overlapping k x k max pooling; returns (out, argmax offset within each window)."""
    cdef Py_ssize_t n_batch = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // k, wo = x.shape[3] // k
    cdef Py_ssize_t n, c, i, j, a, b, best
    cdef real v, top
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n_batch, chans, ho, wo), dtype=dtype)
    idx_arr = np.empty((n_batch, chans, ho, wo), dtype=np.int32)
    cdef real[:, :, :, ::1] out = out_arr
    cdef int[:, :, :, ::1] idx = idx_arr
    with nogil:
        for n in range(n_batch):
            for c in range(chans):
                for i in range(ho):
                    for j in range(wo):
                        top = x[n, c, i * k, j * k]
                        best = 0
                        for a in range(k):
                            for b in range(k):
                                v = x[n, c, i * k + a, j * k + b]
                                if v > top:
                                    top = v
                                    best = a * k + b
                        out[n, c, i, j] = top
                        idx[n, c, i, j] = <int>best
    return out_arr, idx_arr


def maxpool_backward(real[:, :, :, ::1] grad, int[:, :, :, ::1] idx, int k, int h, int w):
    cdef Py_ssize_t n_batch = grad.shape[0], chans = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    cdef Py_ssize_t n, c, i, j, off
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n_batch, chans, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    with nogil:
        for n in range(n_batch):
            for c in range(chans):
                for i in range(ho):
                    for j in range(wo):
                        off = idx[n, c, i, j]
                        dx[n, c, i * k + off // k, j * k + off % k] = grad[n, c, i, j]
    return dx_arr
