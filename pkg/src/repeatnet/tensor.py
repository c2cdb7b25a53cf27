"""Tensors and a reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient::

    with Tape() as tape:
        loss = (w * w).sum()
    backward(tape, loss)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericalError(ArithmeticError):
    """A NaN or Inf was produced."""


_DEBUG = False
_ACTIVE: list["Tape"] = []


def set_debug(enabled: bool) -> None:
    """Check every recorded forward output and every backward gradient for NaN/Inf."""
    global _DEBUG
    _DEBUG = bool(enabled)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what}")


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mul(sum_all(self), _as_tensor(1.0 / self.size, self.dtype))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, inputs, output: Tensor, backward_fn, op: str = "") -> None:
        self.nodes.append(Node(tuple(inputs), output, backward_fn, op))
        self._produced.add(id(output))

    def produced(self, tensor: Tensor) -> bool:
        return id(tensor) in self._produced


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out`` in a Tensor and register ``backward_fn`` on the active tape.

    ``backward_fn(grad_out)`` returns one gradient (or None) per input.
    """
    if _DEBUG:
        _check_finite(out, f"{op} forward")
    needs = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(inputs, result, backward_fn, op)
    return result


def backward(tape: Tape, loss: Tensor, retain_grad: bool = True) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Leaf gradients accumulate into any existing ``.grad``; call ``zero_grad``
    between steps. With ``retain_grad=False`` only leaves receive gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ValueError("loss tensor is not on the tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        if retain_grad:
            node.output.grad = g
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if _DEBUG:
                _check_finite(gi, f"{node.op} backward")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if not tape.produced(t):
                leaves[key] = t
    for key, t in leaves.items():
        g = grads[key]
        if g.shape != t.shape:
            g = g.reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return record("add", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return record("neg", (a,), -a.data, lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return record("mul", (a, b), out,
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    return record("sum", (a,), out, lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))
