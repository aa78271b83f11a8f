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
Date: May 6th 2024
Description:
    Parameter bundles of the convolution and batch-norm operators
"""

from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from mimoc.exceptions import ConfigurationError, ShapeError
from mimoc.modules.tensor.tensor import Tensor

DEFAULT_BN_EPS = 1e-5


@dataclass
class ConvParams:
    """Weights of a 2-D convolution.

    Attributes:
        weight (Tensor): [out_channels, in_channels, kH, kW]
        bias (Tensor): [out_channels]
        stride (int): positive stride, shared by both spatial axes.
        padding (int): symmetric zero padding.
    """

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError("Conv weight must be 4-D [out, in, kH, kW]", actual=self.weight.shape)
        if self.out_channels < 1 or self.in_channels < 1:
            raise ShapeError("Conv needs at least one input and one output channel", actual=self.weight.shape)
        if self.bias.shape != (self.out_channels,):
            raise ShapeError("Conv bias length must equal out_channels", (self.out_channels,), self.bias.shape)
        if not isinstance(self.stride, (int, np.integer)) or self.stride < 1:
            raise ConfigurationError(f"Conv stride must be a positive integer, got {self.stride}")
        if not isinstance(self.padding, (int, np.integer)) or self.padding < 0:
            raise ConfigurationError(f"Conv padding must be a non-negative integer, got {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_size[0] * self.kernel_size[1]

    def output_extent(self, height: int, width: int) -> Tuple[int, int]:
        """Spatial output size; the division by the stride must be exact."""
        k_h, k_w = self.kernel_size
        extents = []
        for size, k in ((height, k_h), (width, k_w)):
            span = size + 2 * self.padding - k
            if span < 0 or span % self.stride != 0:
                raise ConfigurationError(
                    f"Conv output extent ({size} + 2*{self.padding} - {k})/{self.stride} + 1 is not a positive integer"
                )
            extents.append(span // self.stride + 1)
        return extents[0], extents[1]

    def replace(self, **changes) -> "ConvParams":
        return replace(self, **changes)


@dataclass
class BnParams:
    """Inference-mode batch normalization statistics and affine parameters."""

    gamma: Tensor
    beta: Tensor
    mean: Tensor
    var: Tensor
    eps: float = DEFAULT_BN_EPS

    def __post_init__(self):
        shapes = {self.gamma.shape, self.beta.shape, self.mean.shape, self.var.shape}
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise ShapeError("BN gamma/beta/mean/var must be 1-D vectors of one length", actual=sorted(shapes))
        if np.any(self.var.data < 0):
            raise ConfigurationError("BN running variance must be non-negative")
        if not self.eps > 0:
            raise ConfigurationError(f"BN eps must be positive, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, channels: int, eps: float = DEFAULT_BN_EPS, dtype=np.float32) -> "BnParams":
        """Freshly initialised BN: gamma=1, beta=0, mean=0, var=1."""
        return cls(
            gamma=Tensor.ones((channels,), dtype),
            beta=Tensor.zeros((channels,), dtype),
            mean=Tensor.zeros((channels,), dtype),
            var=Tensor.ones((channels,), dtype),
            eps=eps,
        )

    def scale(self) -> np.ndarray:
        """Per-channel multiplier gamma / sqrt(var + eps), in float64."""
        return self.gamma.data.astype(np.float64) / np.sqrt(self.var.data.astype(np.float64) + self.eps)

    def replace(self, **changes) -> "BnParams":
        return replace(self, **changes)
