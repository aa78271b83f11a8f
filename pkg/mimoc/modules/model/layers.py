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
Date: May 13th 2024
Description:
    Node and parameter-bundle classes of a ModelGraph
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Text, Tuple, Union

import numpy as np
from dataclasses_json import dataclass_json

from mimoc.enums import LayerKind, QuantBits
from mimoc.exceptions import ConfigurationError, DataCorruptionError, ShapeError
from mimoc.modules.tensor import BnParams, ConvParams, Tensor


class BiasedConvParams(ConvParams):
    """Convolution produced by folding a batch-norm into its weights and bias."""


@dataclass
class LinearParams:
    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("Linear weight must be [G, F] with a [G] bias", actual=self.weight.shape)

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]


@dataclass
class GateParams:
    """Per-channel multiplicative Gaussian gate.

    Attributes:
        mu (Tensor): [C] gate means.
        log_sigma2 (Tensor): [C] log gate variances.
        mask (KeptChannels, optional): hard mask attached by `apply_masks`; pruned
            channels then output exactly zero in eval mode.
    """

    mu: Tensor
    log_sigma2: Tensor
    mask: Optional["KeptChannels"] = None

    def __post_init__(self):
        if self.mu.ndim != 1 or self.mu.shape != self.log_sigma2.shape:
            raise ShapeError("Gate mu and log_sigma2 must be [C] vectors", self.mu.shape, self.log_sigma2.shape)
        if not self.log_sigma2.is_finite():
            raise ConfigurationError("Gate log_sigma2 must be finite")

    @property
    def channels(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def init(cls, channels: int, mu_init: float, log_sigma2_init: float, dtype=np.float32) -> "GateParams":
        return cls(
            mu=Tensor(np.full((channels,), mu_init), dtype=dtype),
            log_sigma2=Tensor(np.full((channels,), log_sigma2_init), dtype=dtype),
        )

    def sigma2(self) -> np.ndarray:
        return np.exp(self.log_sigma2.data.astype(np.float64))

    def alpha(self) -> np.ndarray:
        """Signal-to-noise ratio mu^2 / sigma^2 per channel."""
        mu = self.mu.data.astype(np.float64)
        return mu * mu / self.sigma2()

    def effective_scale(self) -> np.ndarray:
        """Eval-mode multiplier: mu for kept channels, zero for masked ones."""
        scale = self.mu.data.astype(np.float64).copy()
        if self.mask is not None:
            keep = np.zeros(self.channels, dtype=bool)
            keep[list(self.mask.kept)] = True
            scale[~keep] = 0.0
        return scale


@dataclass_json
@dataclass
class KeptChannels:
    """Sorted, distinct channel indices that survive pruning."""

    original_count: int
    kept: List[int] = field(default_factory=list)

    def __post_init__(self):
        self.kept = [int(k) for k in self.kept]
        if any(b <= a for a, b in zip(self.kept, self.kept[1:])):
            raise ConfigurationError("KeptChannels.kept must be strictly increasing")
        if self.kept and (self.kept[0] < 0 or self.kept[-1] >= self.original_count):
            raise ConfigurationError(f"KeptChannels indices must lie in [0, {self.original_count})")

    @classmethod
    def all(cls, count: int) -> "KeptChannels":
        return cls(count, list(range(count)))

    @property
    def count(self) -> int:
        return len(self.kept)

    @property
    def pruned_fraction(self) -> float:
        return 1.0 - self.count / self.original_count if self.original_count else 0.0

    def is_identity(self) -> bool:
        return self.count == self.original_count


@dataclass_json
@dataclass
class QuantParams:
    """Affine range of one quantization group."""

    w_min: float
    w_max: float
    bits: int = 8

    def __post_init__(self):
        self.bits = QuantBits(self.bits).value
        if not self.w_max >= self.w_min:
            raise ConfigurationError(f"QuantParams: w_max ({self.w_max}) < w_min ({self.w_min})")

    @property
    def levels(self) -> int:
        return QuantBits(self.bits).levels

    @property
    def offset(self) -> int:
        return QuantBits(self.bits).offset

    @property
    def step(self) -> float:
        return (self.w_max - self.w_min) / self.levels


@dataclass
class QuantTensor:
    """Integer codes plus one QuantParams per group.

    Attributes:
        codes (np.ndarray): int8 array with the original shape.
        params (List[QuantParams]): one entry for per-tensor quantization, one per
            leading-axis slice for per-channel quantization.
        axis (int, optional): 0 for per-channel groups, None for a single group.
    """

    codes: np.ndarray
    params: List[QuantParams]
    axis: Optional[int] = None

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int8)
        expected = 1 if self.axis is None else self.codes.shape[0]
        if len(self.params) != expected:
            raise ConfigurationError(f"QuantTensor needs {expected} parameter groups, got {len(self.params)}")
        if len({p.bits for p in self.params}) != 1:
            raise ConfigurationError("QuantTensor groups must share one bit width")
        bits = QuantBits(self.bits)
        if self.codes.size and (self.codes.min() < bits.code_min or self.codes.max() > bits.code_max):
            raise DataCorruptionError(f"QuantTensor codes outside the int{bits.value} range")

    @property
    def bits(self) -> int:
        return self.params[0].bits

    @property
    def qp(self) -> QuantParams:
        return self.params[0]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.codes.shape)

    @property
    def size(self) -> int:
        return int(self.codes.size)

    def storage_bytes(self) -> float:
        """1 byte per int8 code, half a byte per int4 code."""
        return self.size * self.bits / 8.0


@dataclass
class QuantizedConvParams:
    weight: QuantTensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

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
        return self.dequantized.output_extent(height, width)

    @cached_property
    def dequantized(self) -> ConvParams:
        from mimoc.modules.compression.quant import dequantize

        return ConvParams(dequantize(self.weight), self.bias, self.stride, self.padding)


@dataclass
class QuantizedLinearParams:
    weight: QuantTensor
    bias: Tensor

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @cached_property
    def dequantized(self) -> LinearParams:
        from mimoc.modules.compression.quant import dequantize

        return LinearParams(dequantize(self.weight), self.bias)


AnyConv = Union[ConvParams, QuantizedConvParams]


@dataclass
class Downsample:
    """Bypass projection of a residual block (never gated)."""

    conv: AnyConv
    bn: Optional[BnParams] = None


@dataclass
class ResidualBlockParams:
    """Two-convolution residual block.

    Main path: conv1 -> bn1 -> gate1 -> relu -> conv2 -> bn2 -> gate2 -> recover.
    Bypass: identity or downsample. Output: relu(main + bypass).

    After structural pruning the main path can degenerate: `main_bias` holds the
    constant per-channel output left when every conv1 channel is pruned, and a
    block whose conv1, conv2 and main_bias are all None is its bypass alone.
    """

    conv1: Optional[AnyConv]
    bn1: Optional[BnParams]
    conv2: Optional[AnyConv]
    bn2: Optional[BnParams]
    downsample: Optional[Downsample] = None
    gate1: Optional[GateParams] = None
    gate2: Optional[GateParams] = None
    recover_mask: Optional[KeptChannels] = None
    main_bias: Optional[Tensor] = None
    channels: int = 0

    def __post_init__(self):
        if not self.channels:
            if self.recover_mask is not None:
                self.channels = self.recover_mask.original_count
            elif self.conv2 is not None:
                self.channels = self.conv2.out_channels
            elif self.downsample is not None:
                self.channels = self.downsample.conv.out_channels
        if self.has_main_path and self.conv2.out_channels != self.main_width:
            raise ShapeError("Residual block conv2 width differs from its recover mask", (self.main_width,), (self.conv2.out_channels,))

    @property
    def has_main_path(self) -> bool:
        return self.conv1 is not None

    @property
    def main_width(self) -> int:
        """Channels produced by the main path before channel recovery."""
        if self.recover_mask is not None:
            return self.recover_mask.count
        return self.channels

    def replace(self, **changes) -> "ResidualBlockParams":
        return replace(self, **changes)


NodeParams = Any


@dataclass
class LayerNode:
    """One node of a ModelGraph.

    Attributes:
        id (Text): unique node identifier.
        kind (LayerKind): operator kind.
        params: kind-specific parameter bundle (None for relu/concat/global_pool).
        inputs (List[Text]): predecessor node ids or graph input names.
    """

    id: Text
    kind: LayerKind
    params: NodeParams = None
    inputs: List[Text] = field(default_factory=list)

    def __post_init__(self):
        self.kind = LayerKind(self.kind)
        self.inputs = list(self.inputs)

    def replace(self, **changes) -> "LayerNode":
        return replace(self, **changes)


@dataclass_json
@dataclass
class SharedNeuron:
    """Row `row_b` of conv slot `slot_b` shares its storage with row `row_a` of `slot_a`."""

    slot_a: Text
    row_a: int
    slot_b: Text
    row_b: int


def as_float_conv(params: AnyConv) -> ConvParams:
    return params.dequantized if isinstance(params, QuantizedConvParams) else params


def as_float_linear(params: Union[LinearParams, QuantizedLinearParams]) -> LinearParams:
    return params.dequantized if isinstance(params, QuantizedLinearParams) else params
