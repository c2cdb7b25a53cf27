"""Child filter blocks realized from one shared, trainable parent block.

A :class:`RepeatGroup` owns a parent weight of shape (n, m, k, k) and the
per-child transform state. ``realize_weights`` tiles ``gamma2`` children along
output channels and ``gamma1`` along input channels, giving a
(gamma2*n, gamma1*m, k, k) weight whose gradient flows back into the parent and
into every child's transform parameters.

Child ``i`` of a layer sits in input tile ``i // gamma2`` and output tile
``i % gamma2``. For depth repetition the same parent feeds ``depth`` layers;
children are numbered consecutively across layers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import NumericalError, Tensor, record

VARIANTS = ("linear", "s", "f")
EXP_CLAMP = 30.0


@dataclass(frozen=True)
class RepeatSpec:
    gamma1: int = 1
    gamma2: int = 1
    variant: str = "linear"
    depth: int = 1
    pin_first: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown repeat variant {self.variant!r}; expected one of {VARIANTS}")
        if self.gamma1 < 1 or self.gamma2 < 1 or self.depth < 1:
            raise ValueError(f"repeat multiplicities must be positive, got {self}")

    @property
    def tiles(self) -> int:
        return self.gamma1 * self.gamma2

    @property
    def n_children(self) -> int:
        return self.tiles * self.depth

    @property
    def transformed_children(self) -> int:
        if self.variant == "linear":
            return 0
        return self.n_children - (1 if self.pin_first else 0)


def swish_transform(x, beta1, beta2):
    """Elementwise ``beta1 * x / (1 + exp(beta2 * x))`` with the exponent clamped to +-30."""
    z = np.clip(beta2 * x, -EXP_CLAMP, EXP_CLAMP)
    return beta1 * x / (1.0 + np.exp(z))


def swish_backward(x, beta1, beta2, g):
    """Partials of :func:`swish_transform` times ``g``.

    Returns ``(dx, dbeta1, dbeta2)``; the beta partials are summed over all
    elements. The clamp is differentiated exactly (zero slope where it binds).
    """
    x = np.asarray(x)
    g = np.asarray(g)
    zr = beta2 * x
    z = np.clip(zr, -EXP_CLAMP, EXP_CLAMP)
    s = 1.0 / (1.0 + np.exp(z))
    ds_dz = -s * (1.0 - s) * (np.abs(zr) <= EXP_CLAMP)
    dx = g * beta1 * (s + x * beta2 * ds_dz)
    dbeta1 = np.sum(g * x * s)
    dbeta2 = np.sum(g * beta1 * x * x * ds_dz)
    for v in (dx, dbeta1, dbeta2):
        if not np.all(np.isfinite(v)):
            raise NumericalError("non-finite swish gradient")
    return dx, dbeta1, dbeta2


def flip_multiplier(latent) -> np.ndarray:
    """+1 / -1 per element; a latent of exactly 0 keeps its sign (no flip)."""
    return np.where(np.asarray(latent) < 0, -1, 1)


def flip_bits(latent) -> np.ndarray:
    """Boolean mask, True where the parent weight is negated."""
    return np.asarray(latent) < 0


def flip_forward(x, bits):
    return np.where(bits, -x, x)


def sign_grad_approx(t) -> np.ndarray:
    """Piecewise-linear surrogate derivative of sign(t), nonzero only on [-1, 1)."""
    t = np.asarray(t)
    return np.where((t >= -1) & (t < 0), 2 + 2 * t, np.where((t >= 0) & (t < 1), 2 - 2 * t, 0.0))


def flip_backward(latent, x, g):
    """Returns ``(d_parent, d_latent)`` for ``child = q(latent) * x``."""
    latent, x, g = np.asarray(latent), np.asarray(x), np.asarray(g)
    if not (latent.shape == x.shape == g.shape):
        raise ValueError(f"flip_backward shape mismatch: {latent.shape}, {x.shape}, {g.shape}")
    q = flip_multiplier(latent).astype(g.dtype)
    return q * g, (g * x * sign_grad_approx(latent)).astype(g.dtype)


def kaiming_normal(shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class RepeatGroup:
    """A parent block plus the transform parameters of all its children."""

    def __init__(self, name: str, parent_shape, spec: RepeatSpec, rng: np.random.Generator | None = None,
                 dtype=np.float32, identity_start: bool = False):
        self.name = name
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(0)
        self.parent = Tensor(kaiming_normal(tuple(parent_shape), rng, dtype), requires_grad=True,
                             name=f"{name}.parent")
        self.beta1: list[Tensor | None] = [None] * spec.n_children
        self.beta2: list[Tensor | None] = [None] * spec.n_children
        self.latents: list[Tensor | None] = [None] * spec.n_children
        for i in self._transformed():
            if spec.variant == "s":
                self.beta1[i] = Tensor(np.array(0.0, dtype), True, f"{name}.child{i}.beta1")
                self.beta2[i] = Tensor(np.array(0.0, dtype), True, f"{name}.child{i}.beta2")
            elif spec.variant == "f":
                self.latents[i] = Tensor(np.zeros(parent_shape, dtype), True, f"{name}.child{i}.mask")
        self.init_transforms(rng, identity_start=identity_start)

    def _transformed(self):
        if self.spec.variant == "linear":
            return range(0)
        return range(1 if self.spec.pin_first else 0, self.spec.n_children)

    def init_transforms(self, rng: np.random.Generator, identity_start: bool = False) -> None:
        """s: every child starts at (beta1, beta2) = (2, 0), i.e. the identity.
        f: latents ~ U(-1, 1), or +0.5 everywhere with ``identity_start``."""
        for i in self._transformed():
            if self.spec.variant == "s":
                self.beta1[i].data[...] = 2.0
                self.beta2[i].data[...] = 0.0
            else:
                lat = self.latents[i]
                if identity_start:
                    lat.data[...] = 0.5
                else:
                    lat.data[...] = rng.uniform(-1.0, 1.0, size=lat.shape)

    # parameter bookkeeping -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return [self.parent] + self.transform_parameters()

    def transform_parameters(self) -> list[Tensor]:
        out = []
        for i in self._transformed():
            if self.spec.variant == "s":
                out += [self.beta1[i], self.beta2[i]]
            else:
                out.append(self.latents[i])
        return out

    def mask_bits(self, i: int) -> np.ndarray | None:
        lat = self.latents[i]
        return None if lat is None else flip_bits(lat.data)

    def trainable_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def stored_bits(self) -> int:
        """32 bits per float; flip masks cost one bit per element."""
        floats = self.parent.size + sum(b.size for b in self.beta1 if b is not None) * 2
        masks = sum(lat.size for lat in self.latents if lat is not None)
        return 32 * floats + masks

    @property
    def realized_shape(self) -> tuple[int, int, int, int]:
        n, m, k, _ = self.parent.shape
        return (self.spec.gamma2 * n, self.spec.gamma1 * m, k, k)

    # realization -------------------------------------------------------------

    def _child_inputs(self, i: int) -> list[Tensor]:
        if self.spec.variant == "s" and self.beta1[i] is not None:
            return [self.beta1[i], self.beta2[i]]
        if self.spec.variant == "f" and self.latents[i] is not None:
            return [self.latents[i]]
        return []

    def _child_forward(self, i: int, x: np.ndarray) -> np.ndarray:
        if self.spec.variant == "s" and self.beta1[i] is not None:
            return swish_transform(x, self.beta1[i].data, self.beta2[i].data).astype(x.dtype)
        if self.spec.variant == "f" and self.latents[i] is not None:
            return flip_forward(x, flip_bits(self.latents[i].data))
        return x.copy()

    def _child_backward(self, i: int, x: np.ndarray, g: np.ndarray):
        """Returns (d_parent, [grads of child params])."""
        if self.spec.variant == "s" and self.beta1[i] is not None:
            dx, db1, db2 = swish_backward(x, self.beta1[i].data, self.beta2[i].data, g)
            dt = x.dtype
            return dx.astype(dt), [np.asarray(db1, dt), np.asarray(db2, dt)]
        if self.spec.variant == "f" and self.latents[i] is not None:
            dp, dl = flip_backward(self.latents[i].data, x, g)
            return dp, [dl]
        return g, []

    def realize_child(self, i: int) -> Tensor:
        if not 0 <= i < self.spec.n_children:
            raise IndexError(f"child index {i} out of range for {self.spec.n_children} children")
        x = self.parent.data
        out = self._child_forward(i, x)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite values realizing {self.name} child {i}")

        def backward(g):
            dp, dparams = self._child_backward(i, x, g)
            return [dp] + dparams

        return record("realize_child", [self.parent] + self._child_inputs(i), out, backward)

    def realize_weights(self, layer: int = 0) -> Tensor:
        """Tiled weight for depth-slot ``layer`` (0 for width-only groups)."""
        spec = self.spec
        if not 0 <= layer < spec.depth:
            raise IndexError(f"layer {layer} out of range for depth {spec.depth}")
        x = self.parent.data
        n, m = x.shape[:2]
        children = range(layer * spec.tiles, (layer + 1) * spec.tiles)
        out = np.empty(self.realized_shape, dtype=x.dtype)
        inputs = [self.parent]
        for i in children:
            a, b = divmod(i - layer * spec.tiles, spec.gamma2)
            out[b * n:(b + 1) * n, a * m:(a + 1) * m] = self._child_forward(i, x)
            inputs += self._child_inputs(i)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite values realizing {self.name}")

        def backward(g):
            dparent = np.zeros_like(x)
            dparams = []
            for i in children:
                a, b = divmod(i - layer * spec.tiles, spec.gamma2)
                dp, dchild = self._child_backward(i, x, g[b * n:(b + 1) * n, a * m:(a + 1) * m])
                dparent += dp
                dparams += dchild
            return [dparent] + dparams

        return record("realize_weights", inputs, out, backward)


def realize_child(group: RepeatGroup, i: int) -> Tensor:
    return group.realize_child(i)


def realize_weights(group: RepeatGroup, layer: int = 0) -> Tensor:
    return group.realize_weights(layer)


def init_transforms(group: RepeatGroup, seed: int, identity_start: bool = False) -> None:
    group.init_transforms(np.random.default_rng(seed), identity_start=identity_start)
