import math

import numpy as np
import pytest

from repeatnet import functional as F
from repeatnet.gradcheck import check_repeat_f, check_repeat_s, check_swish, gradcheck
from repeatnet.repeat import (EXP_CLAMP, RepeatGroup, RepeatSpec, flip_backward, flip_bits, flip_forward,
                              flip_multiplier, init_transforms, sign_grad_approx, swish_backward, swish_transform)
from repeatnet.tensor import NumericalError, Tape, Tensor, backward

from oracles import psi


def make_group(variant, g1=2, g2=3, shape=(4, 3, 3, 3), depth=1, dtype=np.float64, seed=0, **kw):
    return RepeatGroup("g", shape, RepeatSpec(g1, g2, variant, depth), np.random.default_rng(seed), dtype, **kw)


def parent_grad(group, upstream, layer=0):
    group.parent.grad = None
    with Tape() as tape:
        w = group.realize_weights(layer)
        loss = (w * Tensor(upstream)).sum()
    backward(tape, loss)
    return group.parent.grad


# transforms ----------------------------------------------------------------------


def test_swish_identity_at_2_0(rng):
    x = rng.standard_normal(50)
    np.testing.assert_array_equal(swish_transform(x, 2.0, 0.0), x)


def test_swish_known_value():
    assert swish_transform(1.0, 1.0, 1.0) == pytest.approx(1 / (1 + math.e), abs=1e-12)
    assert swish_transform(1.0, 1.0, 1.0) == pytest.approx(0.268941, abs=1e-6)


@pytest.mark.parametrize("b1,b2", [(2.0, 0.0), (1.3, -0.7), (-0.5, 2.0)])
def test_swish_at_zero(b1, b2):
    dx, db1, db2 = swish_backward(0.0, b1, b2, 1.0)
    assert swish_transform(0.0, b1, b2) == 0.0
    assert db1 == 0.0 and db2 == 0.0
    assert dx == pytest.approx(b1 / 2)


def test_swish_dx_constant_when_beta2_zero(rng):
    x = rng.uniform(-5, 5, 20)
    dx, _, _ = swish_backward(x, 1.7, 0.0, np.ones(20))
    np.testing.assert_allclose(dx, 1.7 / 2, rtol=1e-15)


def test_swish_against_math_exp(rng):
    for x, b1, b2 in rng.uniform(-3, 3, (20, 3)):
        assert swish_transform(x, b1, b2) == pytest.approx(psi(x, b1, b2), rel=1e-12)


def test_swish_clamp_avoids_overflow():
    out = swish_transform(np.array([100.0, -100.0]), 1.0, 10.0)
    assert np.all(np.isfinite(out))
    dx, db1, db2 = swish_backward(np.array([100.0]), 1.0, 10.0, np.array([1.0]))
    assert np.isfinite(dx).all() and np.isfinite(db2)
    assert EXP_CLAMP == 30.0


def test_swish_gradients_finite_difference():
    assert check_swish(probes=200, seed=7) < 1e-6


def test_flip_examples():
    assert flip_forward(np.array([0.5]), np.array([True]))[0] == -0.5
    assert flip_multiplier(np.array([0.0]))[0] == 1  # sign(0): no flip
    np.testing.assert_array_equal(flip_bits(np.array([-0.1, 0.0, 0.3])), [True, False, False])


def test_flip_is_involution(rng):
    x = rng.standard_normal(100)
    bits = rng.random(100) < 0.5
    np.testing.assert_array_equal(flip_forward(flip_forward(x, bits), bits), x)


def test_sign_surrogate_shape():
    t = np.array([-1.5, -1.0, -0.5, 0.0, 0.5, 0.999, 1.0, 2.0])
    np.testing.assert_allclose(sign_grad_approx(t), [0, 0, 1, 2, 1, 0.002, 0, 0], atol=1e-12)


def test_flip_backward_examples():
    dp, dl = flip_backward(np.array([0.0]), np.array([1.0]), np.array([1.0]))
    assert dl[0] == 2.0 and dp[0] == 1.0
    dp, dl = flip_backward(np.array([-1.5, 1.2]), np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    np.testing.assert_array_equal(dl, [0.0, 0.0])
    np.testing.assert_array_equal(dp, [-1.0, 1.0])


def test_flip_backward_shape_mismatch():
    with pytest.raises(ValueError):
        flip_backward(np.zeros(2), np.zeros(3), np.zeros(2))


# realize ---------------------------------------------------------------------------


def test_single_linear_child_is_parent():
    g = make_group("linear", 1, 1)
    np.testing.assert_array_equal(g.realize_weights().data, g.parent.data)


def test_tiling_layout():
    g = make_group("f", 2, 3)
    n, m = 4, 3
    w = g.realize_weights().data
    assert w.shape == (3 * n, 2 * m, 3, 3)
    for i in range(6):
        a, b = i // 3, i % 3
        child = g.realize_child(i).data
        np.testing.assert_array_equal(w[b * n:(b + 1) * n, a * m:(a + 1) * m], child)


def test_child_index_out_of_range():
    g = make_group("s", 2, 2)
    with pytest.raises(IndexError):
        g.realize_child(4)
    with pytest.raises(IndexError):
        g.realize_weights(1)


def test_linear_parent_grad_sums_children(rng):
    g = make_group("linear", 2, 3)
    up = np.ones(g.realized_shape)
    np.testing.assert_array_equal(parent_grad(g, up), 6 * np.ones(g.parent.shape))


def test_parent_grad_is_sum_of_child_grads(rng):
    g = make_group("s", 2, 2)
    for b1, b2 in zip(g.beta1, g.beta2):
        b1.data[...] = rng.uniform(0.5, 2.5)
        b2.data[...] = rng.uniform(-1, 1)
    up = rng.standard_normal(g.realized_shape)
    total = parent_grad(g, up)
    n, m = g.parent.shape[:2]
    want = np.zeros(g.parent.shape)
    for i in range(4):
        a, b = i // 2, i % 2
        dx, _, _ = swish_backward(g.parent.data, g.beta1[i].data, g.beta2[i].data,
                                  up[b * n:(b + 1) * n, a * m:(a + 1) * m])
        want += dx
    np.testing.assert_allclose(total, want, rtol=1e-12)


def test_s_identity_start_equals_linear(rng):
    lin = make_group("linear", 2, 2, seed=5)
    s = make_group("s", 2, 2, seed=5)
    s.parent.data[...] = lin.parent.data
    np.testing.assert_array_equal(s.realize_weights().data, lin.realize_weights().data)
    up = rng.standard_normal(lin.realized_shape)
    np.testing.assert_allclose(parent_grad(s, up), parent_grad(lin, up), rtol=1e-6)


def test_f_identity_start_equals_linear():
    lin = make_group("linear", 2, 2, seed=5)
    f = make_group("f", 2, 2, seed=5, identity_start=True)
    f.parent.data[...] = lin.parent.data
    np.testing.assert_array_equal(f.realize_weights().data, lin.realize_weights().data)


def test_f_default_init_half_bits_set():
    g = RepeatGroup("g", (10, 10, 10, 10), RepeatSpec(1, 1, "f"), np.random.default_rng(0))
    bits = g.mask_bits(0)
    n = bits.size
    assert abs(bits.sum() - n / 2) <= 3 * math.sqrt(n / 4)


def test_init_transforms_reseeds():
    g = make_group("f", 2, 2)
    init_transforms(g, seed=3)
    first = [lat.data.copy() for lat in g.latents]
    init_transforms(g, seed=3)
    for a, b in zip(first, g.latents):
        np.testing.assert_array_equal(a, b.data)
    s = make_group("s", 2, 2)
    s.beta1[0].data[...] = 5.0
    init_transforms(s, seed=0)
    assert s.beta1[0].data == 2.0 and s.beta2[0].data == 0.0


def test_non_finite_child_raises():
    g = make_group("s", 1, 1)
    g.beta1[0].data[...] = np.inf
    with pytest.raises(NumericalError):
        g.realize_child(0)


def test_parameter_counts_per_variant():
    size = 4 * 3 * 3 * 3
    assert make_group("linear").trainable_count() == size
    assert make_group("s").trainable_count() == size + 2 * 6
    assert make_group("f").trainable_count() == size + 6 * size
    assert make_group("f").stored_bits() == 32 * size + 6 * size
    assert make_group("s").stored_bits() == 32 * (size + 12)


def test_pin_first_leaves_child_zero_raw():
    g = RepeatGroup("g", (2, 2, 3, 3), RepeatSpec(2, 1, "s", pin_first=True), np.random.default_rng(0), np.float64)
    assert g.beta1[0] is None
    assert g.spec.transformed_children == 1
    np.testing.assert_array_equal(g.realize_child(0).data, g.parent.data)


def test_depth_children_numbered_across_layers():
    g = make_group("s", 1, 1, depth=3)
    assert g.spec.n_children == 3
    g.beta1[2].data[...] = 4.0
    np.testing.assert_allclose(g.realize_weights(2).data, 2 * g.parent.data)
    np.testing.assert_allclose(g.realize_weights(1).data, g.parent.data)


def test_linear_width_degeneracy(rng):
    """Bias-free linear tiling: tiled input gives gamma1 x the base output, tiled gamma2 times."""
    g = RepeatGroup("g", (5, 3, 3, 3), RepeatSpec(2, 2, "linear"), rng, np.float64)
    x = rng.standard_normal((2, 3, 6, 6))
    base = F.conv2d(Tensor(x), g.parent, padding=1).data
    wide = F.conv2d(Tensor(np.concatenate([x, x], axis=1)), g.realize_weights(), padding=1).data
    want = np.concatenate([2 * base, 2 * base], axis=1)
    assert np.max(np.abs(wide - want)) / np.max(np.abs(want)) < 1e-5


def test_repeat_layer_gradients():
    assert check_repeat_s(probes=100, seed=2) < 1e-4
    assert check_repeat_f(probes=100, seed=2) < 1e-4


def test_latent_gradient_matches_surrogate(rng):
    g = make_group("f", 1, 1, shape=(2, 2, 1, 1))
    up = rng.standard_normal(g.realized_shape)
    g.latents[0].grad = None
    with Tape() as tape:
        loss = (g.realize_weights() * Tensor(up)).sum()
    backward(tape, loss)
    want = up * g.parent.data * sign_grad_approx(g.latents[0].data)
    np.testing.assert_allclose(g.latents[0].grad, want, rtol=1e-12)


def test_two_layer_toy_net_parent_gradient(rng):
    """gamma1=gamma2=2 groups in two stacked convs: one-coordinate perturbation vs accumulated gradient."""
    g1 = RepeatGroup("a", (3, 2, 3, 3), RepeatSpec(1, 2, "s"), rng, np.float64)
    g2 = RepeatGroup("b", (2, 3, 3, 3), RepeatSpec(2, 2, "s"), rng, np.float64)
    for g in (g1, g2):
        for b1, b2 in zip(g.beta1, g.beta2):
            b1.data[...] = rng.uniform(1, 3)
            b2.data[...] = rng.uniform(-1, 1)
    x = Tensor(rng.standard_normal((2, 2, 6, 6)))
    r = rng.standard_normal((2, 4, 6, 6))

    def loss():
        h = F.relu(F.conv2d(x, g1.realize_weights(), padding=1))
        return (F.conv2d(h, g2.realize_weights(), padding=1) * Tensor(r)).sum()

    assert gradcheck(loss, [g1.parent, g2.parent], h=1e-5, probes=40, seed=1) < 1e-3
