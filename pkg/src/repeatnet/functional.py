"""Differentiable layer primitives on NCHW tensors."""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, record


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an OIHW weight."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if c != i:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if kh != kw:
        raise ShapeError(f"conv2d supports square kernels only, got weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    k = kh
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output size {ho}x{wo} is not positive for input {x.shape}, weight {weight.shape}")

    cols = kernels.im2col(x.data, k, stride, padding, ho, wo)
    wmat = weight.data.reshape(o, -1)
    out = (wmat @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    if bias is not None:
        if bias.shape != (o,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match {o} output channels")
        out += bias.data.reshape(1, o, 1, 1)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
        gx = gw = None
        if x.requires_grad:
            gx = kernels.col2im(wmat.T @ g2, x.shape, k, stride, padding, ho, wo)
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", inputs, out, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", (x,), x.data * mask, lambda g: (g * mask,))


def max_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling (stride == kernel); trailing rows/cols are dropped."""
    n, c, h, w = x.shape
    if h // kernel == 0 or w // kernel == 0:
        raise ShapeError(f"max_pool2d kernel {kernel} larger than input {x.shape}")
    out, idx = kernels.maxpool_forward(x.data, kernel)
    return record("max_pool2d", (x,), out, lambda g: (kernels.maxpool_backward(g, idx, kernel, h, w),))


def avg_pool2d_global(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))
    scale = 1.0 / (h * w)
    return record("avg_pool2d_global", (x,), out,
                  lambda g: (np.broadcast_to((g * scale)[:, :, None, None], x.shape).astype(x.dtype),))


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over N*H*W.

    In training mode the batch statistics are used and the running buffers are
    updated in place (running variance uses the unbiased batch variance).
    """
    n, c, h, w = x.shape
    if n == 0:
        raise ShapeError("batch_norm2d on an empty batch")
    shape = (1, c, 1, 1)
    g_ = gamma.data.reshape(shape)
    if training:
        m = n * h * w
        out, xhat, mu, var, inv_std = kernels.bn_forward_train(x.data, gamma.data, beta.data, eps)
        running_mean *= 1 - momentum
        running_mean += (momentum * mu).astype(running_mean.dtype)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1 - momentum
        running_var += (momentum * unbiased).astype(running_var.dtype)

        def backward(g):
            return kernels.bn_backward_train(g, xhat, gamma.data, inv_std)

        return record("batch_norm2d", (x, gamma, beta), out, backward)

    inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
    xhat = (x.data - running_mean.reshape(shape).astype(x.dtype)) * inv_std.reshape(shape)

    def backward(g):
        return (g * (g_ * inv_std.reshape(shape)),
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)))

    out = (xhat * g_ + beta.data.reshape(shape)).astype(x.dtype)
    return record("batch_norm2d", (x, gamma, beta), out, backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with weight shaped (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense shape mismatch: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("dense", inputs, out, backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-d, got {logits.shape}")
    n, c = logits.shape
    if n == 0:
        raise ShapeError("softmax_cross_entropy on an empty batch")
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = np.asarray((np.log(denom[:, 0]) - z[rows, labels]).mean(), dtype=logits.dtype)

    def backward(g):
        p = ez / denom
        p[rows, labels] -= 1
        return (p * (g / n),)

    return record("softmax_cross_entropy", (logits,), loss, backward)
