"""SGD with momentum, decoupled-per-group weight decay and a step schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class SgdConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    decay_factor: float = 0.1
    decay_epochs: list[int] = field(default_factory=lambda: [80, 120])

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError(f"decay_epochs must be strictly increasing, got {self.decay_epochs}")
        self.decay_epochs = list(self.decay_epochs)

    def lr(self, epoch: int) -> float:
        steps = sum(1 for e in self.decay_epochs if e <= epoch)
        return self.lr0 * self.decay_factor ** steps


@dataclass
class ParamGroup:
    """Parameters sharing decay / clipping treatment.

    ``clip`` bounds the parameter values after every step (used for flip-mask
    latents).
    """

    params: list[Tensor]
    apply_weight_decay: bool = True
    clip: tuple[float, float] | None = None
    name: str = ""


class SGD:
    def __init__(self, groups: list[ParamGroup], cfg: SgdConfig):
        seen: set[int] = set()
        for group in groups:
            for p in group.params:
                if id(p) in seen:
                    raise ValueError(f"parameter {p.name or p.shape} appears in more than one group")
                seen.add(id(p))
        self.groups = groups
        self.cfg = cfg
        self.velocity: dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.grad = None

    def step(self, epoch: int) -> float:
        """Apply one update using the learning rate for ``epoch``; returns that rate."""
        cfg = self.cfg
        lr = cfg.lr(epoch)
        for group in self.groups:
            for p in group.params:
                if p.grad is None:
                    raise RuntimeError(f"missing gradient for parameter {p.name or p.shape} in group {group.name!r}")
                d = p.grad
                if group.apply_weight_decay and cfg.weight_decay:
                    d = d + cfg.weight_decay * p.data
                v = self.velocity.get(id(p))
                v = d.astype(p.dtype, copy=True) if v is None else cfg.momentum * v + d
                self.velocity[id(p)] = v
                p.data -= (lr * v).astype(p.dtype)
                if group.clip is not None:
                    np.clip(p.data, group.clip[0], group.clip[1], out=p.data)
        return lr
