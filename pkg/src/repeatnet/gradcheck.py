"""Central-difference gradient checks and the built-in check suites."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .repeat import RepeatGroup, RepeatSpec, swish_backward, swish_transform
from .tensor import NumericalError, Tape, Tensor, backward


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
              probes: int | None = 100, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values. Up to
    ``probes`` coordinates are sampled uniformly across ``params`` (all of them
    when ``probes`` is None or exceeds the total).
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 parameters, got {p.dtype} for {p.name or p.shape}")
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(tape, loss, retain_grad=False)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    flat = np.arange(total)
    if probes is not None and probes < total:
        flat = np.sort(np.random.default_rng(seed).choice(total, size=probes, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for j in flat:
        k = int(np.searchsorted(offsets, j, side="right") - 1)
        p, idx = params[k], np.unravel_index(j - offsets[k], params[k].shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        fp = float(f().data)
        p.data[idx] = orig - h
        fm = float(f().data)
        p.data[idx] = orig
        cd = (fp - fm) / (2 * h)
        a = float(analytic[k][idx])
        if not (np.isfinite(cd) and np.isfinite(a)):
            raise NumericalError(f"non-finite value while checking {p.name or p.shape}{idx}")
        worst = max(worst, relative_error(a, cd))
    return worst


# suites ----------------------------------------------------------------------


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def check_swish(probes: int = 100, seed: int = 0, h: float = 1e-4) -> float:
    """Partials of the swish-style transform wrt x, beta1, beta2 at random points."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        x, b1, b2 = rng.uniform(-2, 2), rng.uniform(-3, 3), rng.uniform(-3, 3)
        dx, db1, db2 = swish_backward(x, b1, b2, 1.0)
        num = (
            (swish_transform(x + h, b1, b2) - swish_transform(x - h, b1, b2)) / (2 * h),
            (swish_transform(x, b1 + h, b2) - swish_transform(x, b1 - h, b2)) / (2 * h),
            (swish_transform(x, b1, b2 + h) - swish_transform(x, b1, b2 - h)) / (2 * h),
        )
        for a, n in zip((dx, db1, db2), num):
            worst = max(worst, relative_error(float(a), float(n)))
    return worst


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * Tensor(weights)).sum()


def check_conv(probes: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x, w, b = _t(rng, 2, 3, 7, 7), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    r = rng.standard_normal((2, 4, 4, 4))
    return gradcheck(lambda: _weighted_sum(F.conv2d(x, w, b, stride=2, padding=1), r), [x, w, b], probes=probes,
                     seed=seed)


def check_batch_norm(probes: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x, gamma, beta = _t(rng, 4, 3, 5, 5), _t(rng, 3), _t(rng, 3)
    r = rng.standard_normal((4, 3, 5, 5))
    rm, rv = np.zeros(3), np.ones(3)
    return gradcheck(lambda: _weighted_sum(F.batch_norm2d(x, gamma, beta, rm, rv, True), r), [x, gamma, beta],
                     probes=probes, seed=seed)


def check_dense(probes: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x, w, b = _t(rng, 6, 9), _t(rng, 5, 9), _t(rng, 5)
    r = rng.standard_normal((6, 5))
    return gradcheck(lambda: _weighted_sum(F.dense(x, w, b), r), [x, w, b], probes=probes, seed=seed)


def check_cross_entropy(probes: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    logits = _t(rng, 16, 10, scale=2.0)
    labels = rng.integers(0, 10, 16)
    return gradcheck(lambda: F.softmax_cross_entropy(logits, labels), [logits], probes=probes, seed=seed)


def _repeat_layer_loss(group: RepeatGroup, x: Tensor, r: np.ndarray) -> Callable[[], Tensor]:
    return lambda: _weighted_sum(F.conv2d(x, group.realize_weights(), None, 1, 1), r)


def check_repeat_s(probes: int = 100, seed: int = 0) -> float:
    """s-variant width repeat layer (gamma1=gamma2=2) wrt parent and every beta."""
    rng = np.random.default_rng(seed)
    group = RepeatGroup("g", (3, 2, 3, 3), RepeatSpec(2, 2, "s"), rng, np.float64)
    for b1, b2 in zip(group.beta1, group.beta2):
        b1.data[...] = rng.uniform(0.5, 3.0)
        b2.data[...] = rng.uniform(-2.0, 2.0)
    x = Tensor(rng.standard_normal((2, 4, 5, 5)))
    r = rng.standard_normal((2, 6, 5, 5))
    return gradcheck(_repeat_layer_loss(group, x, r), group.parameters(), probes=probes, seed=seed)


def check_repeat_f(probes: int = 100, seed: int = 0) -> float:
    """f-variant width repeat layer wrt the parent, latents held far from the sign switch."""
    rng = np.random.default_rng(seed)
    group = RepeatGroup("g", (3, 2, 3, 3), RepeatSpec(2, 2, "f"), rng, np.float64)
    for lat in group.latents:
        lat.data[...] = rng.choice([-0.75, 0.75], size=lat.shape)
    x = Tensor(rng.standard_normal((2, 4, 5, 5)))
    r = rng.standard_normal((2, 6, 5, 5))
    return gradcheck(_repeat_layer_loss(group, x, r), [group.parent], probes=probes, seed=seed)


def check_cnn(probes: int = 100, seed: int = 0) -> float:
    """Five-layer CNN (4 convs incl. an s-repeat layer, dense head) wrt all parameters."""
    from .model import Network
    from .planner import ArchSpec, LayerSpec, ScalePolicy, realize

    arch = ArchSpec(
        [
            LayerSpec("conv", 2, 3, 3, 1, 1, 0),
            LayerSpec("conv", 3, 3, 3, 1, 1, 0),
            LayerSpec("pool", kernel=2, stage_id=0),
            LayerSpec("conv", 3, 4, 3, 1, 1, 1),
            LayerSpec("conv_block", 4, 4, 3, 1, 1, 2),
            LayerSpec("dense", 4, 5, stage_id=3),
        ],
        num_classes=5,
        input_shape=(2, 8, 8),
    )
    net = Network(realize(arch, ScalePolicy("width", 2, variant="s")), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for g in net.groups.values():
        for b1, b2 in zip(g.beta1, g.beta2):
            b1.data[...] = rng.uniform(1.0, 3.0)
            b2.data[...] = rng.uniform(-1.0, 1.0)
    images = rng.standard_normal((4, 2, 8, 8))
    labels = rng.integers(0, 5, 4)
    return gradcheck(lambda: F.softmax_cross_entropy(net.forward(images, training=True), labels),
                     net.parameters(), probes=probes, seed=seed)


SUITES: dict[str, Callable[..., float]] = {
    "swish": check_swish,
    "conv": check_conv,
    "bn": check_batch_norm,
    "dense": check_dense,
    "ce": check_cross_entropy,
    "repeat_s": check_repeat_s,
    "flip": check_repeat_f,
    "cnn": check_cnn,
}


def run_suites(names: Sequence[str] | str = "all", probes: int = 100, seed: int = 0) -> dict[str, float]:
    if names == "all":
        names = list(SUITES)
    elif isinstance(names, str):
        names = [names]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown gradcheck suite(s) {unknown}; known: {sorted(SUITES)}")
    return {n: SUITES[n](probes=probes, seed=seed) for n in names}
