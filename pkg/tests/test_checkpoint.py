import struct

import numpy as np
import pytest

from repeatnet.checkpoint import (BIT, MAGIC, CheckpointError, load_checkpoint, network_state, read_tensors,
                                  save_checkpoint, write_tensors)
from repeatnet.model import Network
from repeatnet.planner import ScalePolicy, mnist_2conv, realize, resnet_small


def trained_like(net, rng):
    """Give every parameter and BN buffer non-default values."""
    for p in net.parameters():
        p.data[...] = rng.standard_normal(p.shape).astype(p.dtype)
    for g in net.groups.values():
        for lat in g.latents:
            if lat is not None:
                lat.data[...] = rng.uniform(-1, 1, lat.shape)
    for bn in net.bns.values():
        bn.running_mean[...] = rng.standard_normal(bn.running_mean.shape)
        bn.running_var[...] = rng.uniform(0.5, 2, bn.running_var.shape)
        bn.trained = True
    return net


def test_header_layout(tmp_path):
    write_tensors(tmp_path / "a.rpnt", {"w": np.array([1.5, -2.0], np.float32)})
    raw = (tmp_path / "a.rpnt").read_bytes()
    assert raw[:4] == b"RPNT"
    assert struct.unpack("<I", raw[4:8]) == (1,)
    assert struct.unpack("<I", raw[8:12]) == (1,) and raw[12:13] == b"w"
    assert raw[13:15] == bytes([0, 1])
    assert struct.unpack("<I", raw[15:19]) == (2,)
    assert np.frombuffer(raw[19:], "<f4").tolist() == [1.5, -2.0]


@pytest.mark.parametrize("n", [1, 7, 8, 9, 64, 1001])
def test_bits_roundtrip_exact(tmp_path, rng, n):
    bits = rng.random((n,)) < 0.5
    write_tensors(tmp_path / "m.rpnt", {"m": bits.reshape(n, 1)})
    raw = (tmp_path / "m.rpnt").read_bytes()
    assert raw[13] == BIT
    assert len(raw) == 8 + 4 + 1 + 2 + 8 + (n + 7) // 8
    back = read_tensors(tmp_path / "m.rpnt")["m"]
    assert back.dtype == bool
    np.testing.assert_array_equal(back, bits.reshape(n, 1))


def test_bits_are_msb_first(tmp_path):
    write_tensors(tmp_path / "m.rpnt", {"m": np.array([True, False, False, False, False, False, False, True, True])})
    raw = (tmp_path / "m.rpnt").read_bytes()
    assert raw[-2:] == bytes([0b10000001, 0b10000000])


def test_all_dtypes_roundtrip(tmp_path, rng):
    tensors = {"f32": rng.standard_normal((2, 3)).astype(np.float32), "f64": rng.standard_normal(4),
               "u8": np.arange(5, dtype=np.uint8), "i64": np.array([-3, 2**40]), "scalar": np.array(2.5)}
    write_tensors(tmp_path / "t.rpnt", tensors)
    back = read_tensors(tmp_path / "t.rpnt")
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype
        np.testing.assert_array_equal(back[k], v)


def test_corrupt_files(tmp_path):
    write_tensors(tmp_path / "ok.rpnt", {"w": np.zeros(10, np.float32)})
    raw = (tmp_path / "ok.rpnt").read_bytes()
    (tmp_path / "magic.rpnt").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "cut.rpnt").write_bytes(raw[:-3])
    (tmp_path / "ver.rpnt").write_bytes(MAGIC + struct.pack("<I", 9) + raw[8:])
    tagged = bytearray(raw)
    tagged[13] = 42
    (tmp_path / "tag.rpnt").write_bytes(bytes(tagged))
    for name, msg in [("magic", "bad magic"), ("cut", "truncated"), ("ver", "version"), ("tag", "unknown dtype")]:
        with pytest.raises(CheckpointError, match=msg):
            read_tensors(tmp_path / f"{name}.rpnt")


def test_duplicate_names_rejected(tmp_path):
    write_tensors(tmp_path / "a.rpnt", {"w": np.zeros(1, np.float32)})
    raw = (tmp_path / "a.rpnt").read_bytes()
    (tmp_path / "dup.rpnt").write_bytes(raw + raw[8:])
    with pytest.raises(CheckpointError, match="duplicate"):
        read_tensors(tmp_path / "dup.rpnt")


def test_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        write_tensors(tmp_path / "a.rpnt", {"c": np.zeros(2, np.complex64)})


def test_checkpoint_name_scheme(tmp_path):
    net = Network(realize(mnist_2conv(4), ScalePolicy("depth", 1, {1: 2}, "s")))
    names = set(network_state(net))
    assert {"conv2.parent", "conv2.child0.beta1", "conv2.child1.beta2", "dense.weight"} <= names
    net_f = Network(realize(mnist_2conv(4), ScalePolicy("width", 2, variant="f")))
    assert "conv2.child3.mask" in network_state(net_f)


@pytest.mark.parametrize("policy", [ScalePolicy("width", 2, variant="s"), ScalePolicy("width", 2, variant="f"),
                                    ScalePolicy("width", 2, variant="linear")])
def test_network_roundtrip_same_outputs(tmp_path, rng, policy):
    net = trained_like(Network(realize(resnet_small(4), policy), seed=3), rng)
    save_checkpoint(tmp_path / "m.rpnt", net, extra={"note": "x"})
    back, extra = load_checkpoint(tmp_path / "m.rpnt")
    assert extra == {"note": "x"}
    x = rng.standard_normal((4, 3, 32, 32)).astype(np.float32)
    np.testing.assert_array_equal(net.forward(x, training=False).data, back.forward(x, training=False).data)
    for g_name, g in net.groups.items():
        for i in range(g.spec.n_children):
            if g.latents[i] is not None:
                np.testing.assert_array_equal(g.mask_bits(i), back.groups[g_name].mask_bits(i))


def test_latents_optional(tmp_path, rng):
    net = trained_like(Network(realize(mnist_2conv(4), ScalePolicy("width", 2, variant="f"))), rng)
    save_checkpoint(tmp_path / "bits.rpnt", net)
    save_checkpoint(tmp_path / "full.rpnt", net, include_latents=True)
    assert (tmp_path / "bits.rpnt").stat().st_size < (tmp_path / "full.rpnt").stat().st_size
    full, _ = load_checkpoint(tmp_path / "full.rpnt")
    np.testing.assert_array_equal(full.groups["conv2"].latents[1].data, net.groups["conv2"].latents[1].data)
    bits, _ = load_checkpoint(tmp_path / "bits.rpnt")
    assert set(np.unique(np.abs(bits.groups["conv2"].latents[1].data))) == {0.5}


def test_checkpoint_missing_tensor(tmp_path, rng):
    net = Network(realize(mnist_2conv(4), ScalePolicy()))
    save_checkpoint(tmp_path / "m.rpnt", net)
    tensors = read_tensors(tmp_path / "m.rpnt")
    del tensors["dense.bias"]
    write_tensors(tmp_path / "bad.rpnt", tensors)
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(tmp_path / "bad.rpnt")
    tensors = read_tensors(tmp_path / "m.rpnt")
    tensors["dense.bias"] = np.zeros(3, np.float32)
    write_tensors(tmp_path / "shape.rpnt", tensors)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "shape.rpnt")
    del tensors["__plan__"]
    write_tensors(tmp_path / "noplan.rpnt", tensors)
    with pytest.raises(CheckpointError, match="plan"):
        load_checkpoint(tmp_path / "noplan.rpnt")
