"""Pure-numpy im2col / col2im with the same layout as the compiled kernels."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, padding, ho, wo):
    n, c = x.shape[:2]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (n, c, ho, wo, kh, kw) -> (c, kh, kw, n, ho, wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)


def col2im(cols, n, c, h, w, k, stride, padding, ho, wo):
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(c, k, k, n, ho, wo).transpose(3, 0, 1, 2, 4, 5)
    for kh in range(k):
        for kw in range(k):
            dxp[:, :, kh : kh + stride * (ho - 1) + 1 : stride,
                kw : kw + stride * (wo - 1) + 1 : stride] += cols6[:, :, kh, kw]
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + w])
    return dxp


def bn_forward_train(x, gamma, beta, eps):
    mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
    xc = x - mean.reshape(1, -1, 1, 1)
    var = (xc * xc).mean(axis=(0, 2, 3), dtype=np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv_std.reshape(1, -1, 1, 1)).astype(x.dtype)
    y = xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
    return y, xhat, mean, var, inv_std


def bn_backward_train(grad, xhat, gamma, inv_std):
    n, c, h, w = grad.shape
    m = n * h * w
    sg = grad.sum(axis=(0, 2, 3), dtype=np.float64)
    sgx = (grad * xhat).sum(axis=(0, 2, 3), dtype=np.float64)
    shape = (1, -1, 1, 1)
    scale = (gamma * inv_std / m).reshape(shape)
    dx = scale * (m * grad - sg.reshape(shape) - xhat * sgx.reshape(shape))
    return dx.astype(grad.dtype), sgx.astype(grad.dtype), sg.astype(grad.dtype)


def maxpool_forward(x, k):
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    win = x[:, :, : ho * k, : wo * k].reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1).astype(np.int32)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool_backward(grad, idx, k, h, w):
    n, c, ho, wo = grad.shape
    gwin = np.zeros((n, c, ho, wo, k * k), dtype=grad.dtype)
    np.put_along_axis(gwin, idx[..., None].astype(np.intp), grad[..., None], axis=-1)
    dx = np.zeros((n, c, h, w), dtype=grad.dtype)
    dx[:, :, : ho * k, : wo * k] = gwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
    return dx
