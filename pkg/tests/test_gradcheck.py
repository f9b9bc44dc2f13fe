import numpy as np
import pytest

from batchinject.errors import GradientCheckError
from batchinject.gradcheck import gradcheck
from batchinject.tensor import (
    BnState,
    Tensor,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    relu,
    softmax_cross_entropy,
)


def make_params(rng, **shapes):
    return {
        name: Tensor(rng.normal(size=shape, scale=0.5), requires_grad=True)
        for name, shape in shapes.items()
    }


def test_gradcheck_linear_layer():
    rng = np.random.default_rng(0)
    params = make_params(rng, w=(3, 4), b=(4,))
    x = Tensor(rng.normal(size=(5, 3)))
    labels = rng.integers(0, 4, size=5)

    def closure():
        return softmax_cross_entropy(linear(x, params["w"], params["b"]), labels)

    assert gradcheck(closure, params) <= 1e-6


def test_gradcheck_conv_relu_linear_stack():
    rng = np.random.default_rng(1)
    params = make_params(rng, k=(4, 3, 3, 3), kb=(4,), w=(4, 3), b=(3,))
    x = Tensor(rng.normal(size=(2, 3, 6, 6)))
    labels = rng.integers(0, 3, size=2)

    def closure():
        h = relu(conv2d(x, params["k"], params["kb"], stride=2, padding=1))
        return softmax_cross_entropy(linear(global_avg_pool(h), params["w"], params["b"]), labels)

    assert gradcheck(closure, params) <= 1e-4


def test_gradcheck_relu_away_from_kink():
    rng = np.random.default_rng(2)
    x_data = rng.normal(size=(4, 6))
    x_data[np.abs(x_data) < 1e-3] = 0.1
    params = {"x": Tensor(x_data, requires_grad=True)}

    def closure():
        h = relu(params["x"])
        return softmax_cross_entropy(h, np.zeros(4, dtype=np.int64))

    assert gradcheck(closure, params) <= 1e-4


def test_gradcheck_batch_norm_train_mode():
    rng = np.random.default_rng(3)
    params = make_params(rng, gamma=(5,), beta=(5,))
    params["gamma"].data += 1.0
    x = Tensor(rng.normal(size=(6, 5, 3, 3)))
    state = BnState.initial(5, np.float64)

    def closure():
        out = batch_norm(
            x, params["gamma"], params["beta"], state, mode="train", update_running=False
        )
        return softmax_cross_entropy(global_avg_pool(out), np.arange(6) % 5)

    assert gradcheck(closure, params) <= 1e-4


def test_gradcheck_detects_corrupted_gradient():
    rng = np.random.default_rng(4)
    params = make_params(rng, w=(3, 3), b=(3,))
    x = Tensor(rng.normal(size=(4, 3)))

    def closure():
        return softmax_cross_entropy(linear(x, params["w"], params["b"]), np.array([0, 1, 2, 0]))

    assert gradcheck(closure, params, fault_scale=2.0) >= 0.3


def test_gradcheck_rejects_nondeterministic_closure():
    rng = np.random.default_rng(5)
    params = make_params(rng, w=(2, 2), b=(2,))
    noise = np.random.default_rng(6)

    def closure():
        x = Tensor(noise.normal(size=(3, 2)))
        return softmax_cross_entropy(linear(x, params["w"], params["b"]), np.array([0, 1, 0]))

    with pytest.raises(GradientCheckError, match="deterministic"):
        gradcheck(closure, params)
