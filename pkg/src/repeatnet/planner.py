"""Declarative architectures, scaling policies and realized plans.

A :class:`RealizedPlan` lists every convolution the network will run, each
bound to a repeat group (a shared parent block), plus exact accounting of
trainable scalars, stored bits and inference FLOPs. FLOPs use the convention
1 multiply-accumulate = 2 FLOPs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .functional import conv_output_size
from .repeat import VARIANTS

LAYER_KINDS = ("conv", "conv_block", "pool", "dense")
SCALE_MODES = ("none", "width", "depth")


class PlanError(ValueError):
    """The architecture or scaling request is ill-formed."""


@dataclass
class LayerSpec:
    kind: str
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    stage_id: int = 0


@dataclass
class ArchSpec:
    layers: list[LayerSpec]
    num_classes: int
    input_shape: tuple[int, int, int]
    name: str = ""
    conv_bias: bool = False

    def __post_init__(self):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]
        self.input_shape = tuple(self.input_shape)
        self.validate()

    def validate(self) -> None:
        ch = self.input_shape[0]
        dense_seen = 0
        for idx, layer in enumerate(self.layers):
            if layer.kind not in LAYER_KINDS:
                raise PlanError(f"layer {idx}: unknown kind {layer.kind!r}")
            if dense_seen:
                raise PlanError("the dense classifier must be the last layer")
            if layer.kind in ("conv", "conv_block", "dense"):
                if layer.in_ch != ch:
                    raise PlanError(f"layer {idx} ({layer.kind}) expects {layer.in_ch} input channels, gets {ch}")
                ch = layer.out_ch
            if layer.kind == "dense":
                dense_seen += 1
                if layer.out_ch != self.num_classes:
                    raise PlanError(f"classifier outputs {layer.out_ch} != num_classes {self.num_classes}")
        if dense_seen != 1:
            raise PlanError("architecture needs exactly one dense classifier head")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**d)


@dataclass
class ScalePolicy:
    mode: str = "none"
    factor: int = 1
    depth_repeats: dict[int, int] = field(default_factory=dict)
    variant: str = "linear"
    dense_equivalent: bool = False
    identity_start: bool = False
    pin_first: bool = False

    def __post_init__(self):
        if self.mode not in SCALE_MODES:
            raise PlanError(f"unknown scale mode {self.mode!r}")
        if self.variant not in VARIANTS:
            raise PlanError(f"unknown variant {self.variant!r}")
        if self.factor < 1:
            raise PlanError(f"scale factor must be >= 1, got {self.factor}")
        self.depth_repeats = {int(k): int(v) for k, v in self.depth_repeats.items()}
        if any(r < 1 for r in self.depth_repeats.values()):
            raise PlanError(f"depth repeats must be >= 1, got {self.depth_repeats}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_repeats"] = {str(k): v for k, v in sorted(self.depth_repeats.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScalePolicy":
        return cls(**d)


@dataclass
class GroupPlan:
    """One parent block and how it is repeated."""

    name: str
    parent_shape: tuple[int, int, int, int]
    gamma1: int = 1
    gamma2: int = 1
    depth: int = 1
    variant: str = "linear"

    def __post_init__(self):
        self.parent_shape = tuple(self.parent_shape)

    @property
    def n_children(self) -> int:
        return self.gamma1 * self.gamma2 * self.depth

    @property
    def parent_size(self) -> int:
        n, m, k, kk = self.parent_shape
        return n * m * k * kk

    @property
    def realized_shape(self) -> tuple[int, int, int, int]:
        n, m, k, kk = self.parent_shape
        return (self.gamma2 * n, self.gamma1 * m, k, kk)


@dataclass
class ConvUnit:
    """One realized convolution (followed by its own batch norm)."""

    name: str
    group: str
    slot: int
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    padding: int


@dataclass
class RealizedLayer:
    kind: str
    name: str
    convs: list[ConvUnit] = field(default_factory=list)
    shortcut: ConvUnit | None = None
    pool: int = 0
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        self.convs = [c if isinstance(c, ConvUnit) else ConvUnit(**c) for c in self.convs]
        if isinstance(self.shortcut, dict):
            self.shortcut = ConvUnit(**self.shortcut)


@dataclass
class RealizedPlan:
    arch: ArchSpec
    scale: ScalePolicy
    layers: list[RealizedLayer]
    groups: dict[str, GroupPlan]
    pin_first: bool = False
    accounting: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.accounting:
            self.accounting = compute_accounting(self)

    def conv_units(self) -> list[ConvUnit]:
        units = []
        for layer in self.layers:
            units += layer.convs
            if layer.shortcut is not None:
                units.append(layer.shortcut)
        return units

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.to_dict(),
            "scale": self.scale.to_dict(),
            "layers": [asdict(l) for l in self.layers],
            "groups": {k: asdict(g) for k, g in self.groups.items()},
            "accounting": self.accounting,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RealizedPlan":
        scale = ScalePolicy.from_dict(d["scale"])
        plan = cls(
            arch=ArchSpec.from_dict(d["arch"]),
            scale=scale,
            layers=[RealizedLayer(**l) for l in d["layers"]],
            groups={k: GroupPlan(**g) for k, g in d["groups"].items()},
            pin_first=scale.pin_first,
            accounting=dict(d["accounting"]),
        )
        if compute_accounting(plan) != plan.accounting:
            raise PlanError("stored accounting does not match the plan")
        return plan

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "RealizedPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


# planning -------------------------------------------------------------------


def _group_for(name, base_out, base_in, k, g1, g2, variant, dense_equivalent, depth=1) -> GroupPlan:
    if dense_equivalent:
        return GroupPlan(name, (g2 * base_out, g1 * base_in, k, k))
    if g1 * g2 * depth == 1:
        variant = "linear"
    return GroupPlan(name, (base_out, base_in, k, k), g1, g2, depth, variant)


def _unit(name, group: GroupPlan, slot, stride, padding) -> ConvUnit:
    out_ch, in_ch, k, _ = group.realized_shape
    return ConvUnit(name, group.name, slot, in_ch, out_ch, k, stride, padding)


def realize(arch: ArchSpec, policy: ScalePolicy) -> RealizedPlan:
    """Resolve ``arch`` under ``policy`` into a :class:`RealizedPlan`."""
    t = policy.factor if policy.mode == "width" else 1
    repeats = policy.depth_repeats if policy.mode == "depth" else {}
    variant, dense_eq = policy.variant, policy.dense_equivalent
    image_ch = arch.input_shape[0]

    depth_parent: dict[int, int] = {}
    for stage, r in repeats.items():
        candidates = [i for i, l in enumerate(arch.layers) if l.stage_id == stage and l.kind in ("conv", "conv_block")]
        if r == 1:
            continue
        if not candidates:
            raise PlanError(f"stage {stage} has no convolution to repeat")
        idx = candidates[-1]
        layer = arch.layers[idx]
        if layer.kind != "conv" or layer.in_ch != layer.out_ch or layer.stride != 1:
            raise PlanError(
                f"cannot depth-repeat layer {idx} of stage {stage}: repetition needs a plain conv "
                f"with in_ch == out_ch and stride 1, got {layer.kind} {layer.in_ch}->{layer.out_ch} stride {layer.stride}"
            )
        depth_parent[idx] = r

    layers: list[RealizedLayer] = []
    groups: dict[str, GroupPlan] = {}

    def add_group(g: GroupPlan) -> GroupPlan:
        groups[g.name] = g
        return g

    for idx, spec in enumerate(arch.layers):
        g1 = 1 if spec.in_ch == image_ch and idx == _first_conv(arch) else t
        if spec.kind == "conv":
            name = f"conv{idx}"
            r = depth_parent.get(idx, 1)
            if r > 1 and dense_eq:
                units = []
                for j in range(r):
                    g = add_group(_group_for(f"{name}" if j == 0 else f"{name}.r{j}", spec.out_ch, spec.in_ch,
                                             spec.kernel, 1, 1, variant, True))
                    units.append(_unit(g.name, g, 0, spec.stride, spec.padding))
            else:
                g = add_group(_group_for(name, spec.out_ch, spec.in_ch, spec.kernel, g1, t, variant, dense_eq, depth=r))
                units = [_unit(name if j == 0 else f"{name}.r{j}", g, j, spec.stride, spec.padding) for j in range(r)]
            layers.append(RealizedLayer("conv", name, convs=units))
        elif spec.kind == "conv_block":
            name = f"block{idx}"
            ga = add_group(_group_for(f"{name}.conv1", spec.out_ch, spec.in_ch, spec.kernel, g1, t, variant, dense_eq))
            gb = add_group(_group_for(f"{name}.conv2", spec.out_ch, spec.out_ch, spec.kernel, t, t, variant, dense_eq))
            units = [_unit(ga.name, ga, 0, spec.stride, spec.padding), _unit(gb.name, gb, 0, 1, spec.padding)]
            shortcut = None
            if spec.in_ch != spec.out_ch or spec.stride != 1:
                gs = add_group(_group_for(f"{name}.shortcut", spec.out_ch, spec.in_ch, 1, g1, t, variant, dense_eq))
                shortcut = _unit(gs.name, gs, 0, spec.stride, 0)
            layers.append(RealizedLayer("conv_block", name, convs=units, shortcut=shortcut))
        elif spec.kind == "pool":
            layers.append(RealizedLayer("pool", f"pool{idx}", pool=spec.kernel))
        else:
            layers.append(RealizedLayer("dense", "dense", in_features=t * spec.in_ch, out_features=spec.out_ch))
    return RealizedPlan(arch, policy, layers, groups, pin_first=policy.pin_first)


def _first_conv(arch: ArchSpec) -> int:
    for i, l in enumerate(arch.layers):
        if l.kind in ("conv", "conv_block"):
            return i
    return -1


def plan_width_scale(arch: ArchSpec, t: int, variant: str = "linear", dense_equivalent: bool = False,
                     **kw) -> RealizedPlan:
    return realize(arch, ScalePolicy("width", t, {}, variant, dense_equivalent, **kw))


def plan_depth_scale(arch: ArchSpec, depth_repeats: dict[int, int], variant: str = "linear",
                     dense_equivalent: bool = False, **kw) -> RealizedPlan:
    return realize(arch, ScalePolicy("depth", 1, dict(depth_repeats), variant, dense_equivalent, **kw))


# accounting -----------------------------------------------------------------


def _transformed_children(g: GroupPlan, pin_first: bool) -> int:
    if g.variant == "linear":
        return 0
    return g.n_children - (1 if pin_first else 0)


def compute_accounting(plan: RealizedPlan) -> dict:
    conv_weights = sum(g.parent_size for g in plan.groups.values())
    betas = latents = 0
    for g in plan.groups.values():
        kids = _transformed_children(g, plan.pin_first)
        if g.variant == "s":
            betas += 2 * kids
        elif g.variant == "f":
            latents += kids * g.parent_size
    units = plan.conv_units()
    bn = sum(2 * u.out_ch for u in units)
    conv_bias = sum(u.out_ch for u in units) if plan.arch.conv_bias else 0
    dense = sum(l.in_features * l.out_features + l.out_features for l in plan.layers if l.kind == "dense")
    trainable = conv_weights + betas + latents + bn + conv_bias + dense
    floats = trainable - latents
    flops = count_flops(plan)
    return {
        "conv_weights": conv_weights,
        "transform_params": betas + latents,
        "beta_params": betas,
        "mask_latents": latents,
        "bn_params": bn,
        "conv_bias_params": conv_bias,
        "dense_params": dense,
        "trainable_scalars": trainable,
        "stored_bits": 32 * floats + latents,
        "inference_flops": flops["total"],
        "conv_flops": flops["conv"],
        "dense_flops": flops["dense"],
        "elementwise_flops": flops["elementwise"],
    }


def count_trainable_params(plan: RealizedPlan) -> int:
    return compute_accounting(plan)["trainable_scalars"]


def count_model_size_bits(plan: RealizedPlan) -> int:
    return compute_accounting(plan)["stored_bits"]


def count_flops(plan: RealizedPlan, input_shape=None) -> dict:
    """Inference FLOPs split into ``conv``, ``dense`` and ``elementwise``.

    ``total`` is conv + dense; batch norm, activations, pooling and residual
    additions count one FLOP per output element and are reported separately.
    ``per_layer`` maps each conv unit name to its FLOPs.
    """
    c, h, w = tuple(input_shape) if input_shape is not None else plan.arch.input_shape
    conv = dense = elem = 0
    per_layer: dict[str, int] = {}

    def conv_cost(u: ConvUnit, h, w):
        ho = conv_output_size(h, u.kernel, u.stride, u.padding)
        wo = conv_output_size(w, u.kernel, u.stride, u.padding)
        if ho <= 0 or wo <= 0:
            raise PlanError(f"{u.name}: non-positive output size for input {h}x{w}")
        f = 2 * u.kernel * u.kernel * u.in_ch * u.out_ch * ho * wo
        per_layer[u.name] = f
        return f, ho, wo

    for layer in plan.layers:
        if layer.kind == "conv":
            for u in layer.convs:
                f, h, w = conv_cost(u, h, w)
                conv += f
                elem += 2 * u.out_ch * h * w  # batch norm + relu
        elif layer.kind == "conv_block":
            a, b = layer.convs
            f1, h1, w1 = conv_cost(a, h, w)
            f2, h2, w2 = conv_cost(b, h1, w1)
            conv += f1 + f2
            elem += 2 * a.out_ch * h1 * w1 + b.out_ch * h2 * w2
            if layer.shortcut is not None:
                fs, _, _ = conv_cost(layer.shortcut, h, w)
                conv += fs
                elem += layer.shortcut.out_ch * h2 * w2
            elem += 2 * b.out_ch * h2 * w2  # residual add + relu
            h, w = h2, w2
        elif layer.kind == "pool":
            h, w = h // layer.pool, w // layer.pool
            ch = _channels_before(plan, layer)
            elem += ch * h * w
        else:
            elem += layer.in_features  # global average pool output
            dense += 2 * layer.in_features * layer.out_features
    return {"conv": conv, "dense": dense, "elementwise": elem, "total": conv + dense, "per_layer": per_layer}


def _channels_before(plan: RealizedPlan, target: RealizedLayer) -> int:
    ch = plan.arch.input_shape[0]
    for layer in plan.layers:
        if layer is target:
            return ch
        if layer.convs:
            ch = layer.convs[-1].out_ch
    return ch


@dataclass
class FlopsMatch:
    policy: ScalePolicy
    achieved: int
    target: int

    @property
    def ratio(self) -> float:
        return self.achieved / self.target


def flops_matched_search(base: ArchSpec, target_flops: int, mode: str = "width", variant: str = "s",
                         cap: int = 16) -> FlopsMatch:
    """Integer scale factor whose realized inference FLOPs is closest to ``target_flops``.

    Ties go to the smaller factor. Depth mode applies the same repeat count to
    every stage that has a repeatable layer.
    """
    base_flops = count_flops(realize(base, ScalePolicy()))["total"]
    if target_flops < base_flops:
        raise PlanError(f"target {target_flops} FLOPs is below the base network's {base_flops}")

    if mode == "width":
        def policy(f):
            return ScalePolicy("width", f, {}, variant)
    elif mode == "depth":
        stages = sorted({l.stage_id for l in base.layers if l.kind == "conv" and l.in_ch == l.out_ch and l.stride == 1})
        stages = [s for s in stages if _repeatable(base, s)]
        if not stages:
            raise PlanError("no stage of the base architecture can be depth-repeated")

        def policy(f):
            return ScalePolicy("depth", 1, {s: f for s in stages}, variant)
    else:
        raise PlanError(f"flops matching needs mode 'width' or 'depth', got {mode!r}")

    best = None
    for f in range(1, cap + 1):
        pol = policy(f)
        achieved = count_flops(realize(base, pol))["total"]
        if best is None or abs(achieved - target_flops) < abs(best.achieved - target_flops):
            best = FlopsMatch(pol, achieved, target_flops)
        if f == cap and target_flops > achieved:
            raise PlanError(f"target {target_flops} FLOPs unreachable within factor cap {cap} (max {achieved})")
    return best


def _repeatable(arch: ArchSpec, stage: int) -> bool:
    convs = [l for l in arch.layers if l.stage_id == stage and l.kind in ("conv", "conv_block")]
    if not convs:
        return False
    last = convs[-1]
    return last.kind == "conv" and last.in_ch == last.out_ch and last.stride == 1


# presets ---------------------------------------------------------------------


def mnist_2conv(width: int = 16) -> ArchSpec:
    """Two 3x3 convs with max pooling; stage 1's conv is shape-preserving."""
    return ArchSpec(
        [
            LayerSpec("conv", 1, width, 3, 1, 1, stage_id=0),
            LayerSpec("pool", kernel=2, stage_id=0),
            LayerSpec("conv", width, width, 3, 1, 1, stage_id=1),
            LayerSpec("pool", kernel=2, stage_id=1),
            LayerSpec("dense", width, 10, stage_id=2),
        ],
        num_classes=10,
        input_shape=(1, 28, 28),
        name="mnist-2conv",
    )


def cifar_4conv(width: int = 16, num_classes: int = 10) -> ArchSpec:
    """Small VGG: four 3x3 convs in three stages."""
    w = width
    return ArchSpec(
        [
            LayerSpec("conv", 3, w, 3, 1, 1, stage_id=0),
            LayerSpec("pool", kernel=2, stage_id=0),
            LayerSpec("conv", w, 2 * w, 3, 1, 1, stage_id=1),
            LayerSpec("pool", kernel=2, stage_id=1),
            LayerSpec("conv", 2 * w, 4 * w, 3, 1, 1, stage_id=2),
            LayerSpec("conv", 4 * w, 4 * w, 3, 1, 1, stage_id=2),
            LayerSpec("pool", kernel=2, stage_id=2),
            LayerSpec("dense", 4 * w, num_classes, stage_id=3),
        ],
        num_classes=num_classes,
        input_shape=(3, 32, 32),
        name="cifar-4conv",
    )


def resnet_small(width: int = 16, num_classes: int = 10) -> ArchSpec:
    """Small CIFAR ResNet: stem conv plus three basic blocks."""
    w = width
    return ArchSpec(
        [
            LayerSpec("conv", 3, w, 3, 1, 1, stage_id=0),
            LayerSpec("conv_block", w, w, 3, 1, 1, stage_id=1),
            LayerSpec("conv_block", w, 2 * w, 3, 2, 1, stage_id=2),
            LayerSpec("conv_block", 2 * w, 4 * w, 3, 2, 1, stage_id=3),
            LayerSpec("dense", 4 * w, num_classes, stage_id=4),
        ],
        num_classes=num_classes,
        input_shape=(3, 32, 32),
        name="resnet-small",
    )


def vgg(stage_convs: list[int], width: int = 16, num_classes: int = 10, input_shape=(3, 32, 32)) -> ArchSpec:
    """VGG-style net with a single dense head; ``stage_convs[s]`` convs in stage ``s``.

    The first conv of a stage doubles the width (except stage 0); later convs
    in the stage preserve shape and are therefore depth-repeatable.
    """
    layers = []
    ch = input_shape[0]
    for s, n in enumerate(stage_convs):
        out = width * 2 ** s
        for j in range(n):
            layers.append(LayerSpec("conv", ch, out, 3, 1, 1, stage_id=s))
            ch = out
        layers.append(LayerSpec("pool", kernel=2, stage_id=s))
    layers.append(LayerSpec("dense", ch, num_classes, stage_id=len(stage_convs)))
    return ArchSpec(layers, num_classes, tuple(input_shape), name=f"vgg{sum(stage_convs) + 1}")


PRESETS = {
    "mnist-2conv": mnist_2conv,
    "cifar-4conv": cifar_4conv,
    "resnet-small": resnet_small,
}


def arch_from_config(d: dict | str) -> ArchSpec:
    """Accept a preset name, ``{"preset": name, **kwargs}`` or a full ArchSpec dict."""
    if isinstance(d, str):
        d = {"preset": d}
    if "preset" in d:
        if d["preset"] not in PRESETS:
            raise PlanError(f"unknown preset {d['preset']!r}; known: {sorted(PRESETS)}")
        return PRESETS[d["preset"]](**{k: v for k, v in d.items() if k != "preset"})
    return ArchSpec.from_dict(d)
