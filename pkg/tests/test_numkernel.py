import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import central_difference, relative_error
from lsw import numkernel as nk
from lsw.errors import ShapeError

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def layer(rng, out_f, in_f, name="layer"):
    return nk.ParamGroup(name, rng.uniform(-1, 1, (out_f, in_f)), rng.uniform(-1, 1, out_f))


# -- dense -----------------------------------------------------------------


def test_dense_identity():
    lay = nk.ParamGroup("id", np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(nk.dense_forward(lay, [1.0, 2.0, 3.0]).value, [1.0, 2.0, 3.0])


def test_dense_zero_weight_gives_bias():
    lay = nk.ParamGroup("z", np.zeros((2, 4)), np.array([5.0, 5.0]))
    np.testing.assert_array_equal(nk.dense_forward(lay, np.random.default_rng(1).normal(size=4)).value, [5.0, 5.0])


def test_dense_matches_naive_matvec_exactly():
    rng = np.random.default_rng(3)
    for _ in range(20):
        lay = layer(rng, 4, 3)
        x = rng.normal(size=3)
        expected = []
        for i in range(4):
            acc = 0.0
            for j in range(3):
                acc += lay.weight[i, j] * x[j]
            expected.append(acc + lay.bias[i])
        assert nk.dense_forward(lay, x).value.tolist() == expected


def test_dense_shape_mismatch_names_both_shapes():
    lay = nk.ParamGroup("f", np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeError, match=r"\(4,\).*\(2, 3\)"):
        nk.dense_forward(lay, np.zeros(4))


def test_param_group_bias_shape_checked():
    with pytest.raises(ShapeError):
        nk.ParamGroup("bad", np.zeros((2, 3)), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), finite, finite)
def test_dense_is_affine(seed, a, b):
    rng = np.random.default_rng(seed)
    lay = layer(rng, 5, 4)
    x, y = rng.uniform(-2, 2, 4), rng.uniform(-2, 2, 4)
    f = lambda v: nk.dense_forward(lay, v).value  # noqa: E731
    np.testing.assert_allclose(f(a * x + b * y), a * f(x) + b * f(y) - (a + b - 1) * lay.bias, atol=1e-9)


# -- relu / softmax / sigmoid ----------------------------------------------


def test_relu_examples():
    assert nk.relu([-1.0, 0.0, 2.0]).value.tolist() == [0.0, 0.0, 2.0]
    assert not nk.relu(-np.arange(1.0, 6.0)).value.any()


@given(arrays(np.float64, st.integers(1, 20), elements=finite))
def test_relu_idempotent(x):
    once = nk.relu(x).value
    np.testing.assert_array_equal(nk.relu(once).value, once)


@pytest.mark.parametrize("c", [-1e3, -2.5, 0.0, 7.0, 1e3])
def test_softmax_constant_is_uniform(c):
    np.testing.assert_allclose(nk.softmax([c, c, c]).value, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_single_and_closed_form():
    assert nk.softmax([4.2]).value.tolist() == [1.0]
    # exp(0) / (exp(0) + exp(ln 2)) = 1/3
    np.testing.assert_allclose(nk.softmax([0.0, math.log(2.0)]).value, [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_empty_raises():
    with pytest.raises(ShapeError):
        nk.softmax(np.zeros(0))


def test_softmax_overflow_safe():
    out = nk.softmax([1000.0, 1001.0]).value
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-30, 30)))
def test_softmax_invariants(x):
    w = nk.softmax(x).value
    assert np.all(w > 0)
    assert abs(w.sum() - 1.0) <= 1e-9
    # logits closer than float resolution give tied weights
    assert x[np.argmax(w)] >= x.max() - 1e-12


def test_softmax_mask_excludes_entries_and_falls_back():
    w = nk.softmax([1.0, 2.0, 3.0], mask=[True, False, True]).value
    assert w[1] == 0.0
    np.testing.assert_allclose(w.sum(), 1.0)
    np.testing.assert_allclose(nk.softmax([1.0, 1.0], mask=[False, False]).value, [0.5, 0.5])


# -- BCE ---------------------------------------------------------------------


def test_bce_closed_forms():
    assert nk.sigmoid_bce([0.0], [1.0]).value == pytest.approx(math.log(2.0), abs=1e-12)
    assert nk.sigmoid_bce([20.0], [1.0]).value < 1e-8
    assert nk.sigmoid_bce([-800.0, 800.0], [0.0, 1.0]).value == 0.0


def test_bce_matches_unfused_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        z = rng.uniform(-6, 6, 7)
        t = rng.integers(0, 2, 7).astype(float)
        p = np.clip(1.0 / (1.0 + np.exp(-z)), 1e-15, 1 - 1e-15)
        oracle = float(np.mean(-(t * np.log(p) + (1 - t) * np.log(1 - p))))
        assert abs(float(nk.sigmoid_bce(z, t).value) - oracle) < 1e-9


def test_bce_length_mismatch():
    with pytest.raises(ShapeError):
        nk.sigmoid_bce([0.0, 1.0], [1.0])


@given(arrays(np.float64, 5, elements=st.floats(-50, 50)), arrays(np.float64, 5, elements=st.sampled_from([0.0, 1.0])))
def test_bce_nonnegative(z, t):
    assert nk.sigmoid_bce(z, t).value >= 0.0


# -- backward ----------------------------------------------------------------


def _small_net(rng):
    l1, l2 = layer(rng, 4, 3, "l1"), layer(rng, 2, 4, "l2")
    unused = layer(rng, 2, 2, "unused")
    x = rng.uniform(-2, 2, (5, 3))
    t = rng.integers(0, 2, (5, 2)).astype(float)

    def loss():
        return nk.sigmoid_bce(nk.dense_forward(l2, nk.relu(nk.dense_forward(l1, x))), t)

    return [l1, l2, unused], loss


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    groups, loss = _small_net(rng)
    nk.backward(loss())
    for g in groups[:2]:
        for arr, grad in ((g.weight, g.grad_weight), (g.bias, g.grad_bias)):
            numeric = central_difference(lambda: float(loss().value), arr)
            assert relative_error(grad, numeric).max() < 1e-4


@pytest.mark.parametrize("op", ["softmax", "sigmoid", "weighted_sum", "mean", "probability_bce", "embedding_bag"])
def test_op_gradients_match_finite_differences(op):
    rng = np.random.default_rng(9)
    x = rng.uniform(-2, 2, (3, 4))
    probe = rng.uniform(-1, 1, (3, 4))
    table = nk.ParamGroup("emb", rng.uniform(-2, 2, (6, 4)))
    ids, segs = np.array([0, 2, 2, 5, 1]), np.array([0, 0, 1, 1, 2])

    def build(node):
        if op == "softmax":
            out = nk.softmax(node)
        elif op == "sigmoid":
            out = nk.sigmoid(node)
        elif op == "weighted_sum":
            w = nk.softmax(np.array([[0.3, -1.0, 0.8]])).value
            out = nk.weighted_sum(w, nk.reshape(node, (1, 3, 4)))
            return nk.sigmoid_bce(out, np.ones((1, 4)))
        elif op == "mean":
            out = nk.mean(node, axis=0)
            return nk.sigmoid_bce(out, np.zeros(4))
        elif op == "probability_bce":
            return nk.probability_bce(nk.sigmoid(node), (probe > 0).astype(float))
        else:
            out = nk.embedding_bag_mean(table, ids, segs, 3)
        return nk.sigmoid_bce(out, (probe > 0).astype(float))

    if op == "embedding_bag":
        nk.backward(build(None))
        numeric = central_difference(lambda: float(build(None).value), table.weight)
        assert relative_error(table.grad_weight, numeric).max() < 1e-4
        return
    leaf = nk.Node(x)
    nk.backward(build(leaf))
    numeric = central_difference(lambda: float(build(nk.Node(x)).value), x)
    assert relative_error(leaf.grad, numeric).max() < 1e-4


def test_weighted_sum_gradients_both_inputs():
    rng = np.random.default_rng(2)
    w = rng.uniform(-1, 1, (2, 3))
    v = rng.uniform(-2, 2, (2, 3, 4))
    t = rng.integers(0, 2, (2, 4)).astype(float)
    wn, vn = nk.Node(w), nk.Node(v)
    nk.backward(nk.sigmoid_bce(nk.weighted_sum(wn, vn), t))
    f = lambda: float(nk.sigmoid_bce(nk.weighted_sum(w, v), t).value)  # noqa: E731
    assert relative_error(wn.grad, central_difference(f, w)).max() < 1e-4
    assert relative_error(vn.grad, central_difference(f, v)).max() < 1e-4


def test_unused_parameter_gets_exact_zero():
    groups, loss = _small_net(np.random.default_rng(0))
    nk.backward(loss())
    unused = groups[2]
    assert not unused.grad_weight.any() and not unused.grad_bias.any()
    assert not unused.has_grad


def test_scaling_loss_doubles_gradients():
    rng = np.random.default_rng(4)
    groups, loss = _small_net(rng)
    nk.backward(loss())
    single = [g.grad_weight.copy() for g in groups[:2]]
    nk.zero_grad(groups)
    nk.backward(nk.scale(loss(), 2.0))
    for g, s in zip(groups[:2], single):
        np.testing.assert_array_equal(g.grad_weight, 2.0 * s)


def test_backward_without_forward_raises():
    with pytest.raises(RuntimeError, match="without a recorded forward"):
        nk.backward(nk.Node(1.0))
    groups, loss = _small_net(np.random.default_rng(0))
    node = loss()
    nk.backward(node)
    with pytest.raises(RuntimeError):
        nk.backward(node)


def test_frozen_group_receives_no_gradient():
    groups, loss = _small_net(np.random.default_rng(0))
    groups[0].frozen = True
    nk.backward(loss())
    assert not groups[0].grad_weight.any()
    assert groups[1].grad_weight.any()


# -- adam --------------------------------------------------------------------


def test_adam_zero_gradients_leave_params_unchanged():
    g = nk.ParamGroup("p", np.ones((2, 2)), np.ones(2))
    g.has_grad = True
    before = g.weight.copy()
    nk.adam_step([g], nk.AdamState(lr=0.1))
    np.testing.assert_array_equal(g.weight, before)


def test_adam_first_step_matches_hand_oracle():
    lr, b1, b2, eps, grad = 1e-3, 0.9, 0.999, 1e-8, 0.37
    g = nk.ParamGroup("s", np.array([[2.0]]))
    g.grad_weight[...] = grad
    g.has_grad = True
    state = nk.AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    nk.adam_step([g], state)
    m = (1 - b1) * grad
    v = (1 - b2) * grad * grad
    expected = 2.0 - lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
    assert g.weight[0, 0] == pytest.approx(expected, abs=1e-15)
    assert abs(2.0 - g.weight[0, 0]) == pytest.approx(lr, rel=1e-6)
    assert state.step == 1


def test_adam_two_steps_match_hand_oracle():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    grads = [0.5, -0.2]
    g = nk.ParamGroup("s", np.array([[1.0]]))
    state = nk.AdamState(lr=lr)
    x, m, v = 1.0, 0.0, 0.0
    for t, gr in enumerate(grads, start=1):
        g.grad_weight[...] = gr
        g.has_grad = True
        nk.adam_step([g], state)
        m = b1 * m + (1 - b1) * gr
        v = b2 * v + (1 - b2) * gr * gr
        x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    assert g.weight[0, 0] == pytest.approx(x, abs=1e-15)
    assert state.step == 2


def test_adam_frozen_group_bit_identical():
    g = nk.ParamGroup("f", np.random.default_rng(0).normal(size=(3, 3)), np.zeros(3), frozen=True)
    g.grad_weight[...] = 5.0
    before = g.weight.copy()
    nk.adam_step([g], nk.AdamState(lr=1.0))
    assert np.array_equal(g.weight, before)


def test_adam_missing_gradients_raise():
    g = nk.ParamGroup("p", np.ones((1, 1)))
    with pytest.raises(RuntimeError, match="no gradients"):
        nk.adam_step([g], nk.AdamState())
