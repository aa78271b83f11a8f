__author__ = "mimoc"

"""
Copyright 2024 The mimoc authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

     http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""

import numpy as np
import pytest

from mimoc.exceptions import ConfigurationError, ShapeError, UsageError
from mimoc.modules.tensor import SGD, BnParams, ConvParams, GradTape, Tensor, ops, sgd_step


def _numeric_grad(fn, array, h=1e-6):
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        plus, minus = array.copy(), array.copy()
        plus[index] += h
        minus[index] -= h
        grad[index] = (fn(plus) - fn(minus)) / (2 * h)
    return grad


def _close(analytic, numeric):
    return np.max(np.abs(analytic - numeric)) <= 1e-4 * max(1.0, np.max(np.abs(numeric)))


def test_tensor_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 3.0
    assert t.dtype == np.float32
    assert t.bit_equal(Tensor([1.0, 2.0]))
    assert not t.bit_equal(Tensor([1.0, 2.0], dtype=np.float64))


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 5, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    params = ConvParams(Tensor(w, np.float64), Tensor(b, np.float64), stride=2, padding=1)
    out = ops.conv2d(Tensor(x, np.float64), params).data
    assert out.shape == (2, 4, 3, 3)
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = padded[0, :, 2:5, 0:3]
    assert out[0, 1, 1, 0] == pytest.approx(float((w[1] * expected).sum() + b[1]))


def test_conv2d_rejects_channel_mismatch():
    params = ConvParams(Tensor.zeros((2, 3, 1, 1)), Tensor.zeros((2,)))
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor.zeros((1, 2, 4, 4)), params, node="c")


def test_conv_rejects_non_integer_extent():
    params = ConvParams(Tensor.zeros((1, 1, 2, 2)), Tensor.zeros((1,)), stride=2)
    with pytest.raises(ConfigurationError):
        params.output_extent(5, 5)


def test_identity_batchnorm_is_near_identity():
    x = Tensor(np.linspace(-1, 1, 16).reshape(1, 1, 4, 4), np.float64)
    out = ops.batchnorm_infer(x, BnParams.identity(1, dtype=np.float64))
    assert np.allclose(out.data, x.data / np.sqrt(1 + 1e-5))


def test_conv2d_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)

    def loss_of(weight):
        params = ConvParams(Tensor(weight, np.float64), Tensor(b, np.float64), padding=1)
        return float(ops.sum_all(ops.relu(ops.conv2d(Tensor(x, np.float64), params))).item())

    weight = Tensor(w, np.float64)
    with GradTape() as tape:
        tape.watch("w", weight)
        loss = ops.sum_all(ops.relu(ops.conv2d(Tensor(x, np.float64), ConvParams(weight, Tensor(b, np.float64), padding=1))))
    grads = tape.backward(loss)
    assert _close(grads["w"].data, _numeric_grad(loss_of, w))


def test_linear_and_cross_entropy_gradients():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    labels = np.array([0, 2, 1, 1, 0])

    def loss_of(weight):
        logits = ops.linear(Tensor(x, np.float64), Tensor(weight, np.float64), Tensor(b, np.float64))
        return float(ops.softmax_cross_entropy(logits, labels).item())

    weight = Tensor(w, np.float64)
    with GradTape() as tape:
        tape.watch("w", weight)
        loss = ops.softmax_cross_entropy(ops.linear(Tensor(x, np.float64), weight, Tensor(b, np.float64)), labels)
    assert _close(tape.backward(loss)["w"].data, _numeric_grad(loss_of, w))


def test_pool_concat_gradients():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=(2, 1, 3, 3))
    target = rng.normal(size=(2, 3))

    def loss_of(values):
        pooled = ops.global_avg_pool(ops.concat_channels(Tensor(values, np.float64), Tensor(b, np.float64)))
        return float(ops.sum_all(ops.mul(pooled, Tensor(target, np.float64))).item())

    ta = Tensor(a, np.float64)
    with GradTape() as tape:
        tape.watch("a", ta)
        pooled = ops.global_avg_pool(ops.concat_channels(ta, Tensor(b, np.float64)))
        loss = ops.sum_all(ops.mul(pooled, Tensor(target, np.float64)))
    assert _close(tape.backward(loss)["a"].data, _numeric_grad(loss_of, a))


def test_unused_parameter_gets_zero_gradient():
    unused = Tensor.ones((3,), np.float64)
    x = Tensor([1.0, 2.0], np.float64)
    with GradTape() as tape:
        tape.watch("unused", unused)
        tape.watch("x", x)
        loss = ops.sum_all(ops.mul(x, x))
    grads = tape.backward(loss)
    assert np.array_equal(grads["unused"].data, np.zeros(3))
    assert np.allclose(grads["x"].data, [2.0, 4.0])


def test_backward_needs_scalar_loss():
    x = Tensor([1.0, 2.0])
    with GradTape() as tape:
        tape.watch("x", x)
        out = ops.relu(x)
    with pytest.raises(UsageError):
        tape.backward(out)


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(UsageError):
        ops.softmax_cross_entropy(Tensor.zeros((2, 3)), np.array([0, 3]))


def test_sgd_zero_lr_is_bit_identical():
    params = {"w": Tensor([0.1, -0.2, 0.3])}
    grads = {"w": Tensor([1.0, 1.0, 1.0])}
    assert sgd_step(params, grads, 0.0, 0.9)["w"].bit_equal(params["w"])


def test_sgd_momentum_accumulates():
    opt = SGD(lr=0.1, momentum=0.5)
    params = {"w": Tensor([1.0], np.float64)}
    grads = {"w": Tensor([1.0], np.float64)}
    params = opt.step(params, grads)
    params = opt.step(params, grads)
    assert params["w"].item() == pytest.approx(1.0 - 0.1 - 0.15)


@pytest.mark.parametrize("lr,momentum", [(-0.1, 0.0), (0.1, 1.0)])
def test_sgd_rejects_bad_settings(lr, momentum):
    with pytest.raises(ConfigurationError):
        SGD(lr=lr, momentum=momentum)
