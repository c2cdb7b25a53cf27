"""Build a trainable network from a :class:`~repeatnet.planner.RealizedPlan`."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .optim import ParamGroup
from .planner import ConvUnit, RealizedPlan
from .repeat import RepeatGroup, RepeatSpec, kaiming_normal
from .tensor import Tensor


class BatchNorm2d:
    def __init__(self, name: str, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.gamma = Tensor(np.ones(channels, dtype), True, f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels, dtype), True, f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum = momentum
        self.eps = eps
        self.trained = False

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if not training and not self.trained:
            raise RuntimeError(f"{self.name}: eval-mode batch norm before any training batch")
        out = F.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training, self.momentum, self.eps)
        if training:
            self.trained = True
        return out


class Network:
    """Forward pass and parameter registry for a realized plan."""

    def __init__(self, plan: RealizedPlan, seed: int = 0, dtype=np.float32):
        self.plan = plan
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        identity = plan.scale.identity_start
        self.groups: dict[str, RepeatGroup] = {}
        for name, g in plan.groups.items():
            spec = RepeatSpec(g.gamma1, g.gamma2, g.variant, g.depth, pin_first=plan.pin_first)
            self.groups[name] = RepeatGroup(name, g.parent_shape, spec, rng, self.dtype, identity_start=identity)
        self.bns: dict[str, BatchNorm2d] = {}
        self.conv_bias: dict[str, Tensor] = {}
        for u in plan.conv_units():
            self.bns[u.name] = BatchNorm2d(f"{u.name}.bn", u.out_ch, self.dtype)
            if plan.arch.conv_bias:
                self.conv_bias[u.name] = Tensor(np.zeros(u.out_ch, self.dtype), True, f"{u.name}.bias")
        head = next(l for l in plan.layers if l.kind == "dense")
        self.dense_w = Tensor(kaiming_normal((head.out_features, head.in_features), rng, self.dtype), True,
                              "dense.weight")
        self.dense_b = Tensor(np.zeros(head.out_features, self.dtype), True, "dense.bias")
        registered = sum(p.size for p in self.parameters())
        expected = plan.accounting["trainable_scalars"]
        if registered != expected:
            raise AssertionError(f"registered {registered} trainable scalars, plan accounts {expected}")

    # registry ----------------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for g in self.groups.values():
            out += [(p.name, p) for p in g.parameters()]
        for name, bn in self.bns.items():
            out += [(bn.gamma.name, bn.gamma), (bn.beta.name, bn.beta)]
        out += [(b.name, b) for b in self.conv_bias.values()]
        out += [("dense.weight", self.dense_w), ("dense.bias", self.dense_b)]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_groups(self) -> list[ParamGroup]:
        """Decay applies to conv parents and the dense weight only; mask latents are clipped to [-1, 1]."""
        decay = [g.parent for g in self.groups.values()] + [self.dense_w]
        betas, latents = [], []
        for g in self.groups.values():
            for p in g.transform_parameters():
                (latents if g.spec.variant == "f" else betas).append(p)
        other = [p for bn in self.bns.values() for p in (bn.gamma, bn.beta)]
        other += list(self.conv_bias.values()) + [self.dense_b]
        groups = [ParamGroup(decay, True, name="weights"), ParamGroup(other, False, name="norm_bias")]
        if betas:
            groups.append(ParamGroup(betas, False, name="betas"))
        if latents:
            groups.append(ParamGroup(latents, False, clip=(-1.0, 1.0), name="mask_latents"))
        return groups

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # forward -----------------------------------------------------------------

    def _conv(self, u: ConvUnit, x: Tensor, cache: dict) -> Tensor:
        key = (u.group, u.slot)
        if key not in cache:
            cache[key] = self.groups[u.group].realize_weights(u.slot)
        return F.conv2d(x, cache[key], self.conv_bias.get(u.name), u.stride, u.padding)

    def forward(self, x, training: bool = True) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        cache: dict = {}
        for layer in self.plan.layers:
            if layer.kind == "conv":
                for u in layer.convs:
                    x = F.relu(self.bns[u.name](self._conv(u, x, cache), training))
            elif layer.kind == "conv_block":
                a, b = layer.convs
                h = F.relu(self.bns[a.name](self._conv(a, x, cache), training))
                h = self.bns[b.name](self._conv(b, h, cache), training)
                if layer.shortcut is not None:
                    s = layer.shortcut
                    x = self.bns[s.name](self._conv(s, x, cache), training)
                x = F.relu(h + x)
            elif layer.kind == "pool":
                x = F.max_pool2d(x, layer.pool)
            else:
                x = F.dense(F.avg_pool2d_global(x), self.dense_w, self.dense_b)
        return x

    __call__ = forward

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        preds = []
        for i in range(0, len(images), batch_size):
            logits = self.forward(images[i:i + batch_size], training=False)
            preds.append(logits.data.argmax(axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
