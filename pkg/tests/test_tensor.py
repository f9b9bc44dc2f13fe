import math

import numpy as np
import numpy.testing as npt
import pytest

from batchinject import reference, tensor
from batchinject.errors import ConfigurationError, DimensionError
from batchinject.tensor import (
    BnState,
    Tensor,
    backward,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    no_grad,
    relu,
    scale,
    softmax_cross_entropy,
    sum_all,
    topo_order,
)


def param(arr):
    return Tensor(np.asarray(arr), requires_grad=True)


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b) / denom))


# ---------------------------------------------------------------- linear


def test_linear_identity_weight():
    out = linear(param([[1.0, 2.0]]), param([[1.0, 0.0], [0.0, 1.0]]), param([0.0, 0.0]))
    npt.assert_array_equal(out.data, [[1.0, 2.0]])


def test_linear_zero_weight_passes_bias():
    out = linear(param([[1.0, 1.0]]), param([[0.0, 0.0], [0.0, 0.0]]), param([3.0, 4.0]))
    npt.assert_array_equal(out.data, [[3.0, 4.0]])


def test_linear_matches_triple_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    out = linear(Tensor(x), Tensor(w), Tensor(b))
    expected = reference.matmul_naive(x, w) + b
    assert rel_err(out.data, expected) <= 1e-6


def test_linear_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))


# ---------------------------------------------------------------- conv2d


def test_conv2d_scalar_kernel():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.full((1, 1, 1, 1), 2.0))
    out = conv2d(x, w, Tensor(np.zeros(1)))
    npt.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_conv2d_ones_kernel_sums_window():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    w = Tensor(np.ones((1, 1, 2, 2)))
    out = conv2d(x, w, Tensor(np.zeros(1)))
    npt.assert_array_equal(out.data, [[[[10.0]]]])


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0), (3, 2)])
def test_conv2d_matches_direct_loop_oracle(stride, padding):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    expected = reference.conv2d_naive(x, w, b, stride=stride, padding=padding)
    assert out.data.shape == expected.shape
    assert rel_err(out.data, expected) <= 1e-5


def test_conv2d_non_positive_output_is_config_error():
    x = Tensor(np.zeros((1, 1, 2, 2)))
    w = Tensor(np.zeros((1, 1, 5, 5)))
    with pytest.raises(ConfigurationError):
        conv2d(x, w, Tensor(np.zeros(1)))


def test_conv2d_channel_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"channels"):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))


def test_conv2d_deterministic_bitwise():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    a = conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1).data
    c = conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1).data
    assert np.array_equal(a, c)


# ---------------------------------------------------------------- relu


def test_relu_values():
    out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
    npt.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_relu_all_negative():
    out = relu(Tensor(np.full((3, 3), -5.0)))
    npt.assert_array_equal(out.data, np.zeros((3, 3)))


def test_relu_backward_gates_on_positive():
    x = param(np.array([-2.0, 0.0, 3.0]))
    backward(sum_all(relu(x)))
    npt.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


# ---------------------------------------------------------------- batch norm


def test_batch_norm_identity_on_normalized_input():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.0, 1.0, size=(16, 4, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = batch_norm(
        Tensor(x), param(np.ones(4)), param(np.zeros(4)), BnState.initial(4, np.float64)
    )
    assert np.max(np.abs(out.data - x)) <= 1e-5


def test_batch_norm_zero_gamma_emits_beta():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(8, 3, 2, 2))
    beta = np.array([1.0, -2.0, 0.5])
    out = batch_norm(
        Tensor(x), param(np.zeros(3)), param(beta), BnState.initial(3, np.float64)
    )
    npt.assert_allclose(out.data, np.broadcast_to(beta[None, :, None, None], x.shape))


def test_batch_norm_train_output_moments():
    rng = np.random.default_rng(5)
    x = rng.normal(loc=3.0, scale=2.5, size=(32, 4, 6, 6))
    out = batch_norm(
        Tensor(x), param(np.ones(4)), param(np.zeros(4)), BnState.initial(4, np.float64)
    )
    mean, var = reference.channel_moments(out.data)
    assert np.max(np.abs(mean)) <= 1e-6
    assert np.max(np.abs(var - 1.0)) <= 1e-4


def test_batch_norm_updates_running_stats():
    rng = np.random.default_rng(6)
    x = rng.normal(loc=1.0, scale=2.0, size=(64, 2, 4, 4))
    state = BnState.initial(2, np.float64)
    batch_norm(Tensor(x), param(np.ones(2)), param(np.zeros(2)), state, momentum=0.1)
    mu, var = reference.channel_moments(x)
    npt.assert_allclose(state.mean, 0.1 * mu, rtol=1e-12)
    npt.assert_allclose(state.var, 0.9 * 1.0 + 0.1 * var, rtol=1e-12)


def test_batch_norm_eval_uses_running_stats():
    state = BnState(np.array([1.0, 2.0]), np.array([4.0, 9.0]))
    x = np.zeros((1, 2, 2, 2))
    out = batch_norm(
        Tensor(x), param(np.ones(2)), param(np.zeros(2)), state, mode="eval", eps=0.0
    )
    npt.assert_allclose(out.data[0, 0], -1.0 / 2.0)
    npt.assert_allclose(out.data[0, 1], -2.0 / 3.0)


def test_batch_norm_rejects_singleton_batch_in_train():
    with pytest.raises(ConfigurationError, match="at least 2"):
        batch_norm(
            Tensor(np.zeros((1, 2, 3, 3))),
            param(np.ones(2)),
            param(np.zeros(2)),
            BnState.initial(2),
        )


# ---------------------------------------------------------------- softmax cross entropy


def test_softmax_xent_uniform_logits():
    logits = Tensor(np.zeros((4, 10)))
    loss = softmax_cross_entropy(logits, np.zeros(4, dtype=np.int64))
    assert loss.item() == pytest.approx(math.log(10.0), rel=1e-6)


def test_softmax_xent_saturated_correct_class():
    logits = Tensor(np.array([[1000.0, 0.0, 0.0]]))
    loss = softmax_cross_entropy(logits, np.array([0]))
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_softmax_xent_matches_naive_oracle():
    rng = np.random.default_rng(8)
    logits = rng.normal(size=(5, 7))
    labels = rng.integers(0, 7, size=5)
    loss = softmax_cross_entropy(Tensor(logits), labels)
    expected = reference.softmax_cross_entropy_naive(logits, labels)
    assert abs(loss.item() - expected) / abs(expected) <= 1e-10


def test_softmax_xent_shift_invariance():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(6, 5))
    labels = rng.integers(0, 5, size=6)
    a = softmax_cross_entropy(Tensor(logits), labels).item()
    b = softmax_cross_entropy(Tensor(logits + 123.456), labels).item()
    assert abs(a - b) / abs(a) <= 1e-6


def test_softmax_xent_label_out_of_range():
    with pytest.raises(IndexError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


# ---------------------------------------------------------------- backward mechanics


def test_backward_of_sum_is_ones():
    w = param(np.arange(6.0).reshape(2, 3))
    backward(sum_all(w))
    npt.assert_array_equal(w.grad, np.ones((2, 3)))


def test_unused_parameter_grad_untouched():
    used = param(np.ones(3))
    unused = param(np.ones(3))
    unused.grad = np.zeros(3)
    before = unused.grad
    backward(sum_all(used))
    assert unused.grad is before
    npt.assert_array_equal(unused.grad, np.zeros(3))
    assert used.grad is not None


def test_backward_requires_scalar():
    w = param(np.ones(3))
    with pytest.raises(ValueError):
        backward(relu(w))


def test_backward_linearity_in_loss_scale():
    rng = np.random.default_rng(10)
    x = Tensor(rng.normal(size=(4, 3)))
    w = param(rng.normal(size=(3, 2)))
    b = param(rng.normal(size=2))
    backward(sum_all(relu(linear(x, w, b))))
    g1 = w.grad.copy()
    w.grad = None
    b.grad = None
    backward(scale(sum_all(relu(linear(x, w, b))), 2.5))
    assert rel_err(w.grad, 2.5 * g1) <= 1e-6


def test_gradient_accumulation_is_exact_double():
    rng = np.random.default_rng(12)
    x = Tensor(rng.normal(size=(4, 3)))
    w = param(rng.normal(size=(3, 2)))
    b = param(rng.normal(size=2))
    loss = softmax_cross_entropy(linear(x, w, b), np.array([0, 1, 0, 1]))
    backward(loss)
    once = w.grad.copy()
    backward(loss)
    npt.assert_allclose(w.grad, 2.0 * once, rtol=1e-12)


def test_topo_order_visits_each_node_once():
    x = param(np.ones((2, 2)))
    y = relu(x)
    z = sum_all(y)
    order = topo_order(z)
    assert len(order) == len({id(t) for t in order})
    assert [id(t) for t in order].index(id(x)) < [id(t) for t in order].index(id(y))


def test_no_grad_suppresses_recording():
    w = param(np.ones((2, 2)))
    with no_grad():
        out = relu(w)
    assert out.node is None and not out.requires_grad


def test_dtype_is_preserved():
    x64 = Tensor(np.zeros((2, 2), dtype=np.float64))
    assert relu(x64).dtype == np.float64
    x32 = Tensor([[1.0, 2.0]])
    assert x32.dtype == np.float32
