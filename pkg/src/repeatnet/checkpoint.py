"""Binary checkpoints of named tensors.

Layout (all integers little-endian)::

    b"RPNT"  u32 version
    repeated until EOF:
        u32 name_len, name (utf-8), u8 dtype tag, u8 ndim, u32 extent * ndim, payload

Payloads are raw little-endian scalars, except tag ``BIT`` which stores a
boolean array packed 8 per byte (row-major, most significant bit first, zero
padded to a byte boundary). Flip masks are always stored this way; their
trainable latents are written only with ``include_latents=True``.
The realized plan travels as a u8 tensor named ``__plan__`` (JSON text).
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RPNT"
VERSION = 1
F32, F64, U8, BIT, I64 = 0, 1, 2, 3, 4
_DTYPES = {F32: np.dtype("<f4"), F64: np.dtype("<f8"), U8: np.dtype("u1"), I64: np.dtype("<i8")}
_TAGS = {np.dtype(np.float32): F32, np.dtype(np.float64): F64, np.dtype(np.uint8): U8,
         np.dtype(np.int64): I64}


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint."""


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if arr.dtype == np.bool_:
            tag = BIT
            payload = np.packbits(arr.ravel(), bitorder="big").tobytes()
        else:
            try:
                tag = _TAGS[arr.dtype]
            except KeyError:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}") from None
            payload = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(payload)
    Path(path).write_bytes(buf.getvalue())


def read_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        tag, ndim = struct.unpack("<BB", take(2))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        if name in out:
            raise CheckpointError(f"{path}: duplicate tensor {name}")
        if tag == BIT:
            bits = np.unpackbits(np.frombuffer(take((count + 7) // 8), np.uint8), bitorder="big")
            out[name] = bits[:count].astype(bool).reshape(shape)
        elif tag in _DTYPES:
            dt = _DTYPES[tag]
            out[name] = np.frombuffer(take(count * dt.itemsize), dt).reshape(shape).copy()
        else:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name}")
    return out


def network_state(net, include_latents: bool = False) -> dict[str, np.ndarray]:
    state: dict[str, np.ndarray] = {}
    for name, group in net.groups.items():
        state[group.parent.name] = group.parent.data
        for i in range(group.spec.n_children):
            if group.beta1[i] is not None:
                state[group.beta1[i].name] = group.beta1[i].data
                state[group.beta2[i].name] = group.beta2[i].data
            if group.latents[i] is not None:
                state[group.latents[i].name] = group.mask_bits(i)
                if include_latents:
                    state[group.latents[i].name + ".latent"] = group.latents[i].data
    for bn in net.bns.values():
        state[bn.gamma.name] = bn.gamma.data
        state[bn.beta.name] = bn.beta.data
        state[f"{bn.name}.running_mean"] = bn.running_mean
        state[f"{bn.name}.running_var"] = bn.running_var
    for b in net.conv_bias.values():
        state[b.name] = b.data
    state["dense.weight"] = net.dense_w.data
    state["dense.bias"] = net.dense_b.data
    return state


def save_checkpoint(path, net, extra: dict | None = None, include_latents: bool = False) -> None:
    """Write ``net`` (plan, parameters, batch-norm buffers) to ``path``."""
    meta = {"plan": net.plan.to_dict(), "dtype": net.dtype.name, "extra": extra or {}}
    tensors = {"__plan__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8)}
    tensors.update(network_state(net, include_latents))
    write_tensors(path, tensors)


def load_checkpoint(path):
    """Rebuild the network stored at ``path``; returns ``(net, extra)``."""
    from .model import Network
    from .planner import RealizedPlan

    tensors = read_tensors(path)
    try:
        meta = json.loads(tensors.pop("__plan__").tobytes().decode())
        plan = RealizedPlan.from_dict(meta["plan"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: missing or invalid plan ({exc})") from None
    net = Network(plan, seed=0, dtype=np.dtype(meta.get("dtype", "float32")))
    expected = network_state(net, include_latents=False)
    latents = {k[: -len(".latent")]: v for k, v in tensors.items() if k.endswith(".latent")}
    tensors = {k: v for k, v in tensors.items() if not k.endswith(".latent")}
    missing = sorted(set(expected) - set(tensors))
    unexpected = sorted(set(tensors) - set(expected))
    if missing or unexpected:
        raise CheckpointError(f"{path}: tensors do not match plan (missing {missing[:5]}, unexpected {unexpected[:5]})")
    for name, target in expected.items():
        src = tensors[name]
        if src.shape != target.shape:
            raise CheckpointError(f"{path}: {name} has shape {src.shape}, plan expects {target.shape}")
    for group in net.groups.values():
        group.parent.data[...] = tensors[group.parent.name]
        for i in range(group.spec.n_children):
            if group.beta1[i] is not None:
                group.beta1[i].data[...] = tensors[group.beta1[i].name]
                group.beta2[i].data[...] = tensors[group.beta2[i].name]
            lat = group.latents[i]
            if lat is not None:
                bits = tensors[lat.name]
                if lat.name in latents:
                    lat.data[...] = latents[lat.name]
                    if not np.array_equal(lat.data < 0, bits):
                        raise CheckpointError(f"{path}: latents of {lat.name} disagree with stored bits")
                else:
                    lat.data[...] = np.where(bits, -0.5, 0.5)
    for bn in net.bns.values():
        bn.gamma.data[...] = tensors[bn.gamma.name]
        bn.beta.data[...] = tensors[bn.beta.name]
        bn.running_mean[...] = tensors[f"{bn.name}.running_mean"]
        bn.running_var[...] = tensors[f"{bn.name}.running_var"]
        bn.trained = True
    for b in net.conv_bias.values():
        b.data[...] = tensors[b.name]
    net.dense_w.data[...] = tensors["dense.weight"]
    net.dense_b.data[...] = tensors["dense.bias"]
    return net, meta.get("extra", {})
