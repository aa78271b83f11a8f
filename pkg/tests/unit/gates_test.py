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

from mimoc.enums import GateMode
from mimoc.exceptions import ShapeError
from mimoc.modules.compression import gates
from mimoc.modules.model import GateParams, KeptChannels
from mimoc.modules.tensor import GradTape, Tensor, ops


def _gate(mu, log_sigma2=0.0, mask=None):
    mu = np.asarray(mu, dtype=np.float64)
    return GateParams(Tensor(mu, np.float64), Tensor(np.full(mu.shape, log_sigma2), np.float64), mask)


def test_eval_mode_multiplies_by_mu():
    x = Tensor(np.ones((2, 3, 2, 2)), np.float64)
    out = gates.gate_forward(x, _gate([1.0, 0.5, -2.0]))
    assert np.allclose(out.data[0, :, 0, 0], [1.0, 0.5, -2.0])


def test_mask_zeroes_channels_in_both_modes():
    gate = _gate([1.0, 1.0, 1.0], mask=KeptChannels(3, [0, 2]))
    x = Tensor(np.ones((4, 3)), np.float64)
    for mode in (GateMode.EVAL, GateMode.TRAIN):
        out = gates.gate_forward(x, gate, mode, noise_seed=1)
        assert np.all(out.data[:, 1] == 0.0)


def test_train_noise_is_seeded():
    x = Tensor(np.ones((3, 2)), np.float64)
    gate = _gate([1.0, 1.0], log_sigma2=-1.0)
    a = gates.gate_forward(x, gate, GateMode.TRAIN, noise_seed=[5, 0])
    b = gates.gate_forward(x, gate, GateMode.TRAIN, noise_seed=[5, 0])
    c = gates.gate_forward(x, gate, GateMode.TRAIN, noise_seed=[6, 0])
    assert a.bit_equal(b)
    assert not a.bit_equal(c)


def test_train_noise_is_drawn_per_sample_and_channel():
    x = Tensor(np.ones((4, 2, 3, 3)), np.float64)
    out = gates.gate_forward(x, _gate([1.0, 1.0], log_sigma2=-1.0), GateMode.TRAIN, noise_seed=[5, 0]).data
    # one value per (sample, channel), constant over the spatial positions
    assert np.all(out == out[:, :, :1, :1])
    z = out[:, :, 0, 0]
    assert len(np.unique(z)) == z.size
    expected = 1.0 + np.random.default_rng([5, 0]).standard_normal((4, 2)) * np.exp(-0.5)
    assert np.allclose(z, expected)


def test_gate_length_mismatch():
    with pytest.raises(ShapeError):
        gates.gate_forward(Tensor(np.ones((1, 2))), _gate([1.0, 1.0, 1.0]))


def test_train_mode_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 3, 2, 2)), np.float64)
    mu0, ls0 = rng.normal(size=3), rng.normal(size=3) - 1.0

    def loss_of(mu, log_sigma2):
        gate = GateParams(Tensor(mu, np.float64), Tensor(log_sigma2, np.float64))
        return float(ops.sum_all(ops.relu(gates.gate_forward(x, gate, GateMode.TRAIN, noise_seed=3))).item())

    mu, ls = Tensor(mu0, np.float64), Tensor(ls0, np.float64)
    with GradTape() as tape:
        tape.watch("mu", mu)
        tape.watch("ls", ls)
        loss = ops.sum_all(ops.relu(gates.gate_forward(x, GateParams(mu, ls), GateMode.TRAIN, noise_seed=3)))
    grads = tape.backward(loss)
    h = 1e-6
    for i in range(3):
        step = np.zeros(3)
        step[i] = h
        d_mu = (loss_of(mu0 + step, ls0) - loss_of(mu0 - step, ls0)) / (2 * h)
        d_ls = (loss_of(mu0, ls0 + step) - loss_of(mu0, ls0 - step)) / (2 * h)
        assert grads["mu"].data[i] == pytest.approx(d_mu, rel=1e-4, abs=1e-6)
        assert grads["ls"].data[i] == pytest.approx(d_ls, rel=1e-4, abs=1e-6)


def test_regularizer_value_and_gradient():
    gate = _gate([1.0, 0.0, 2.0], log_sigma2=0.0)
    with GradTape() as tape:
        tape.watch("mu", gate.mu)
        tape.watch("ls", gate.log_sigma2)
        value = gates.vib_regularizer([gate])
    assert value.item() == pytest.approx(np.log(2.0) + 0.0 + np.log(5.0))
    grads = tape.backward(value)
    assert np.allclose(grads["mu"].data, [1.0, 0.0, 0.8])
    assert np.allclose(grads["ls"].data, [-0.5, 0.0, -0.8])


def test_regularizer_of_no_gates_is_zero():
    assert gates.vib_regularizer([]).item() == 0.0


def test_channel_recover_zero_fills():
    x = Tensor(np.arange(8, dtype=np.float64).reshape(2, 2, 1, 2), np.float64)
    out = gates.channel_recover(x, KeptChannels(4, [1, 3])).data
    assert out.shape == (2, 4, 1, 2)
    assert np.all(out[:, [0, 2]] == 0.0)
    assert np.array_equal(out[:, 3], x.data[:, 1])


def test_select_then_recover_restores_kept_channels():
    x = Tensor(np.random.default_rng(1).normal(size=(2, 5)), np.float64)
    kept = KeptChannels(5, [0, 4])
    restored = gates.channel_recover(gates.select_channels(x, kept), kept).data
    assert np.array_equal(restored[:, [0, 4]], x.data[:, [0, 4]])
    assert np.all(restored[:, 1:4] == 0.0)
