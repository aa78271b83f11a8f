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
Date: May 7th 2024
Description:
    Forward operators of residual MIMO graphs and their vector-Jacobian products
"""

from typing import Optional, Sequence, Text

import numpy as np

from mimoc.exceptions import ShapeError, UsageError
from mimoc.modules.tensor.params import BnParams, ConvParams
from mimoc.modules.tensor.tape import record
from mimoc.modules.tensor.tensor import Tensor


def _dtype(*tensors: Tensor) -> np.dtype:
    return np.result_type(*(t.dtype for t in tensors))


def _require_ndim(x: Tensor, ndim: int, op: Text) -> None:
    if x.ndim != ndim:
        raise ShapeError(f"{op} expects a {ndim}-D input", actual=x.shape)


def conv2d(x: Tensor, params: ConvParams, node: Optional[Text] = None) -> Tensor:
    """Cross-correlation with per-output-channel bias.

    Partial sums are accumulated in float64 and cast to the input dtype on store.

    Args:
        x (Tensor): [N, Cin, H, W]
        params (ConvParams): weights, bias, stride and padding.
        node (Text, optional): node id used in error messages.

    Returns:
        Tensor: [N, Cout, H', W'] with H' = (H + 2p - kH)/stride + 1
    """
    _require_ndim(x, 4, "conv2d")
    n, c, h, w = x.shape
    if c != params.in_channels:
        raise ShapeError("conv2d input channels differ from weight in_channels", params.weight.shape, x.shape, node)
    h_out, w_out = params.output_extent(h, w)
    k_h, k_w = params.kernel_size
    s, p = params.stride, params.padding
    dtype = _dtype(x, params.weight)

    weight = params.weight.data.astype(np.float64)
    padded = np.pad(x.data.astype(np.float64), ((0, 0), (0, 0), (p, p), (p, p)))
    acc = np.zeros((params.out_channels, n, h_out, w_out))
    windows = []
    for i in range(k_h):
        for j in range(k_w):
            window = padded[:, :, i : i + s * (h_out - 1) + 1 : s, j : j + s * (w_out - 1) + 1 : s]
            windows.append((i, j, window))
            acc += np.tensordot(weight[:, :, i, j], window, axes=([1], [1]))
    acc = acc.transpose(1, 0, 2, 3) + params.bias.data.astype(np.float64)[None, :, None, None]
    out = Tensor.wrap(acc.astype(dtype))

    def vjp(dy: np.ndarray):
        d_weight = np.zeros_like(weight)
        d_padded = np.zeros_like(padded)
        for i, j, window in windows:
            d_weight[:, :, i, j] = np.tensordot(dy, window, axes=([0, 2, 3], [0, 2, 3]))
            contribution = np.tensordot(dy, weight[:, :, i, j], axes=([1], [0]))
            d_padded[:, :, i : i + s * (h_out - 1) + 1 : s, j : j + s * (w_out - 1) + 1 : s] += contribution.transpose(
                0, 3, 1, 2
            )
        d_x = d_padded[:, :, p : p + h, p : p + w]
        return d_x, d_weight, dy.sum(axis=(0, 2, 3))

    return record("conv2d", (x, params.weight, params.bias), out, vjp)


def batchnorm_infer(x: Tensor, params: BnParams, node: Optional[Text] = None) -> Tensor:
    """gamma * (x - mean) / sqrt(var + eps) + beta, channel-wise, for 4-D or 2-D inputs."""
    if x.ndim not in (2, 4) or x.shape[1] != params.channels:
        raise ShapeError("batchnorm channel count differs from BN parameters", (None, params.channels), x.shape, node)
    dtype = _dtype(x, params.gamma)
    view = (1, -1) + (1,) * (x.ndim - 2)
    inv_std = 1.0 / np.sqrt(params.var.data.astype(np.float64) + params.eps)
    centered = x.data.astype(np.float64) - params.mean.data.astype(np.float64).reshape(view)
    normalized = centered * inv_std.reshape(view)
    gamma = params.gamma.data.astype(np.float64)
    out_data = normalized * gamma.reshape(view) + params.beta.data.astype(np.float64).reshape(view)
    out = Tensor.wrap(out_data.astype(dtype))
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def vjp(dy: np.ndarray):
        d_x = dy * (gamma * inv_std).reshape(view)
        return d_x, (dy * normalized).sum(axis=reduce_axes), dy.sum(axis=reduce_axes)

    return record("batchnorm_infer", (x, params.gamma, params.beta), out, vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor, node: Optional[Text] = None) -> Tensor:
    """output[n, g] = sum_f x[n, f] * weight[g, f] + bias[g]"""
    _require_ndim(x, 2, "linear")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError("linear input features differ from weight fan-in", weight.shape, x.shape, node)
    dtype = _dtype(x, weight)
    x64 = x.data.astype(np.float64)
    w64 = weight.data.astype(np.float64)
    out = Tensor.wrap((x64 @ w64.T + bias.data.astype(np.float64)).astype(dtype))

    def vjp(dy: np.ndarray):
        return dy @ w64, dy.T @ x64, dy.sum(axis=0)

    return record("linear", (x, weight, bias), out, vjp)


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    out = Tensor.wrap(np.where(active, x.data, np.zeros((), dtype=x.dtype)))
    return record("relu", (x,), out, lambda dy: (dy * active,))


def add(a: Tensor, b: Tensor, node: Optional[Text] = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("add needs identical shapes", a.shape, b.shape, node)
    out = Tensor.wrap((a.data + b.data).astype(_dtype(a, b)))
    return record("add", (a, b), out, lambda dy: (dy, dy))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError("mul needs identical shapes", a.shape, b.shape)
    a64, b64 = a.data.astype(np.float64), b.data.astype(np.float64)
    out = Tensor.wrap((a64 * b64).astype(_dtype(a, b)))
    return record("mul", (a, b), out, lambda dy: (dy * b64, dy * a64))


def scale(x: Tensor, factor: float) -> Tensor:
    out = Tensor.wrap((x.data.astype(np.float64) * factor).astype(x.dtype))
    return record("scale", (x,), out, lambda dy: (dy * factor,))


def sum_all(x: Tensor) -> Tensor:
    out = Tensor.wrap(np.asarray(x.data.astype(np.float64).sum()).astype(x.dtype))
    return record("sum_all", (x,), out, lambda dy: (np.broadcast_to(dy, x.shape).copy(),))


def concat_channels(a: Tensor, b: Tensor, node: Optional[Text] = None) -> Tensor:
    """Stack along axis 1, a's channels first. Works on [N,C,H,W] and on pooled [N,F]."""
    if a.ndim != b.ndim or a.ndim not in (2, 4) or a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ShapeError("concat needs matching N, H, W", a.shape, b.shape, node)
    split = a.shape[1]
    out = Tensor.wrap(np.concatenate([a.data, b.data], axis=1).astype(_dtype(a, b)))
    return record("concat_channels", (a, b), out, lambda dy: (dy[:, :split], dy[:, split:]))


def global_avg_pool(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C] spatial mean."""
    _require_ndim(x, 4, "global_avg_pool")
    n, c, h, w = x.shape
    out = Tensor.wrap(x.data.astype(np.float64).mean(axis=(2, 3)).astype(x.dtype))

    def vjp(dy: np.ndarray):
        return (np.broadcast_to(dy[:, :, None, None] / (h * w), x.shape).copy(),)

    return record("global_avg_pool", (x,), out, vjp)


def fill_channels(values: Tensor, like_shape: Sequence[int]) -> Tensor:
    """Broadcast a per-channel vector [C] to [N, C, H, W]."""
    shape = tuple(like_shape)
    if values.ndim != 1 or values.shape[0] != shape[1]:
        raise ShapeError("fill_channels vector length differs from channel count", (shape[1],), values.shape)
    out = Tensor.wrap(np.broadcast_to(values.data[None, :, None, None], shape).copy())
    return record("fill_channels", (values,), out, lambda dy: (dy.sum(axis=(0, 2, 3)),))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    _require_ndim(logits, 2, "softmax_cross_entropy")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise ShapeError("cross-entropy needs one label per row", (logits.shape[0],), labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise UsageError(f"cross-entropy labels must lie in [0, {logits.shape[1]})")
    n = logits.shape[0]
    log_probs = log_softmax(logits.data.astype(np.float64))
    loss = -log_probs[np.arange(n), labels].mean()
    out = Tensor.wrap(np.asarray(loss).astype(logits.dtype))

    def vjp(dy: np.ndarray):
        grad = np.exp(log_probs)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (float(dy) / n),)

    return record("softmax_cross_entropy", (logits,), out, vjp)
