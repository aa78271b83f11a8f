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

Author: mimoc team
Date: May 15th 2024
Description:
    Information-bottleneck gate operators and channel recovery
"""

from typing import Iterable, Optional, Sequence, Text, Union

import numpy as np

from mimoc.enums import GateMode
from mimoc.exceptions import ShapeError
from mimoc.modules.model.layers import GateParams, KeptChannels
from mimoc.modules.tensor import Tensor
from mimoc.modules.tensor.tape import record

NoiseSeed = Union[int, Sequence[int], None]


def _channel_view(ndim: int):
    return (1, -1) + (1,) * (ndim - 2)


def gate_forward(
    x: Tensor, gate: GateParams, mode: GateMode = GateMode.EVAL, noise_seed: NoiseSeed = None, node: Optional[Text] = None
) -> Tensor:
    """Multiply every channel of x by its gate variable.

    Train mode samples z = mu + eps * sigma with eps ~ N(0, 1) from `noise_seed`. One eps
    is drawn per (sample, channel) pair, not one per channel for the whole batch, so each
    sample of a batch sees its own gate values. Eval mode uses z = mu. A hard mask, when
    present, forces the masked channels to zero in both modes.

    Args:
        x (Tensor): [N, C, H, W] or [N, C] activations.
        gate (GateParams): gate of C channels.
        mode (GateMode, optional): train or eval. Defaults to eval.
        noise_seed (optional): seed of the noise generator (train mode only).
        node (Text, optional): node id for error messages.

    Returns:
        Tensor: gated activations, same shape as x.
    """
    if x.ndim not in (2, 4) or x.shape[1] != gate.channels:
        raise ShapeError("gate length differs from channel count", (None, gate.channels), x.shape, node)
    mode = GateMode(mode)
    view = _channel_view(x.ndim)
    x64 = x.data.astype(np.float64)
    keep = np.ones(gate.channels, dtype=bool)
    if gate.mask is not None:
        keep[:] = False
        keep[gate.mask.kept] = True
    reduce_spatial = tuple(range(2, x.ndim))

    if mode == GateMode.EVAL:
        factor = gate.effective_scale()
        out = Tensor.wrap((x64 * factor.reshape(view)).astype(x.dtype))

        def vjp(dy: np.ndarray):
            d_mu = (dy * x64).sum(axis=(0,) + reduce_spatial) * keep
            return dy * factor.reshape(view), d_mu, None

        return record("gate_eval", (x, gate.mu, gate.log_sigma2), out, vjp)

    rng = np.random.default_rng(noise_seed)
    eps = rng.standard_normal((x.shape[0], gate.channels))
    sigma = np.exp(0.5 * gate.log_sigma2.data.astype(np.float64))
    z = (gate.mu.data.astype(np.float64)[None, :] + eps * sigma[None, :]) * keep[None, :]
    z_view = z.reshape(z.shape + (1,) * (x.ndim - 2))
    out = Tensor.wrap((x64 * z_view).astype(x.dtype))

    def vjp(dy: np.ndarray):
        d_z = (dy * x64).sum(axis=reduce_spatial) if reduce_spatial else dy * x64
        d_z = d_z * keep[None, :]
        d_mu = d_z.sum(axis=0)
        d_log_sigma2 = (d_z * eps * 0.5 * sigma[None, :]).sum(axis=0)
        return dy * z_view, d_mu, d_log_sigma2

    return record("gate_train", (x, gate.mu, gate.log_sigma2), out, vjp)


def vib_regularizer(gates: Iterable[GateParams]) -> Tensor:
    """R = sum over gates and channels of log(1 + mu^2 / sigma^2), as a scalar Tensor."""
    gates = list(gates)
    if not gates:
        return Tensor(0.0)
    dtype = gates[0].mu.dtype
    mus = [g.mu.data.astype(np.float64) for g in gates]
    inv_sigma2 = [np.exp(-g.log_sigma2.data.astype(np.float64)) for g in gates]
    alphas = [m * m * s for m, s in zip(mus, inv_sigma2)]
    total = sum(float(np.log1p(a).sum()) for a in alphas)
    out = Tensor(total, dtype=dtype)

    def vjp(dy: np.ndarray):
        grads = []
        for mu, s, a in zip(mus, inv_sigma2, alphas):
            grads.append(dy * 2.0 * mu * s / (1.0 + a))
            grads.append(dy * -a / (1.0 + a))
        return grads

    inputs = []
    for g in gates:
        inputs.extend([g.mu, g.log_sigma2])
    return record("vib_regularizer", inputs, out, vjp)


def select_channels(x: Tensor, kept: KeptChannels, node: Optional[Text] = None) -> Tensor:
    """Keep only the channels listed in `kept`, in order."""
    if x.shape[1] != kept.original_count:
        raise ShapeError("select_channels input differs from mask original_count", (None, kept.original_count), x.shape, node)
    index = np.asarray(kept.kept, dtype=np.int64)
    out = Tensor.wrap(np.ascontiguousarray(x.data[:, index]))

    def vjp(dy: np.ndarray):
        d_x = np.zeros(x.shape)
        d_x[:, index] = dy
        return (d_x,)

    return record("select_channels", (x,), out, vjp)


def channel_recover(x: Tensor, kept: KeptChannels, node: Optional[Text] = None) -> Tensor:
    """Zero-fill a pruned tensor back to `kept.original_count` channels.

    Output channel kept.kept[j] holds input channel j; every other channel is exactly zero.
    """
    if x.ndim < 2 or x.shape[1] != kept.count:
        raise ShapeError("channel_recover input differs from kept count", (None, kept.count), x.shape, node)
    if kept.is_identity():
        return x
    index = np.asarray(kept.kept, dtype=np.int64)
    data = np.zeros((x.shape[0], kept.original_count) + x.shape[2:], dtype=x.dtype)
    data[:, index] = x.data
    out = Tensor.wrap(data)
    return record("channel_recover", (x,), out, lambda dy: (dy[:, index],))
