"""Hot kernels (im2col/col2im, batch norm, max pooling) with import-time backend selection.

The compiled Cython extension is used when it was built; otherwise the numpy
fallback is used. Set ``REPEATNET_KERNELS=python`` to force the fallback.
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("REPEATNET_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        _impl = _compiled


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython" or "python"); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def set_backend(name: str) -> str:
    """Switch the active backend at run time (used by the benchmark); returns the previous name."""
    global BACKEND, _impl
    previous = BACKEND
    _impl = get_backend(name)
    BACKEND = name
    return previous


def im2col(x: np.ndarray, k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    return _impl.im2col(np.ascontiguousarray(x), k, stride, padding, ho, wo)


def col2im(cols: np.ndarray, shape, k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = shape
    return _impl.col2im(np.ascontiguousarray(cols), n, c, h, w, k, stride, padding, ho, wo)


def bn_forward_train(x, gamma, beta, eps):
    """Returns ``(y, xhat, mean, var, inv_std)``; statistics are float64."""
    return _impl.bn_forward_train(np.ascontiguousarray(x), np.ascontiguousarray(gamma, x.dtype),
                                  np.ascontiguousarray(beta, x.dtype), float(eps))


def bn_backward_train(grad, xhat, gamma, inv_std):
    """Returns ``(dx, dgamma, dbeta)``."""
    return _impl.bn_backward_train(np.ascontiguousarray(grad), xhat, np.ascontiguousarray(gamma, grad.dtype),
                                   np.ascontiguousarray(inv_std, np.float64))


def maxpool_forward(x, k: int):
    """Returns ``(out, idx)`` where ``idx`` is the argmax offset inside each k x k window."""
    return _impl.maxpool_forward(np.ascontiguousarray(x), k)


def maxpool_backward(grad, idx, k: int, h: int, w: int):
    return _impl.maxpool_backward(np.ascontiguousarray(grad), idx, k, h, w)
