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
Date: June 3rd 2024
Description:
    Post-training affine weight quantization (int8 / int4)
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Optional, Set, Text, Tuple, Union

import numpy as np
from dataclasses_json import dataclass_json

from mimoc.enums import Granularity, LayerKind, QuantBits
from mimoc.exceptions import ConfigurationError, ConfigurationTypeError, DataCorruptionError, UsageError
from mimoc.modules.model.layers import (
    LinearParams,
    QuantizedConvParams,
    QuantizedLinearParams,
    QuantParams,
    QuantTensor,
    ResidualBlockParams,
)
from mimoc.modules.tensor import ConvParams, Tensor

if TYPE_CHECKING:
    from mimoc.modules.model.graph import ModelGraph


@dataclass_json
@dataclass
class QuantConfig:
    """Settings of the quantize stage.

    Attributes:
        bits (int): 8 or 4.
        granularity (Text): 'per_channel' (one range per output filter/row) or 'per_tensor'.
    """

    bits: int = 8
    granularity: Text = Granularity.PER_CHANNEL.value

    def __post_init__(self):
        if not isinstance(self.bits, int):
            raise ConfigurationTypeError("QuantConfig: bits must be an integer")
        try:
            self.bits = QuantBits(self.bits).value
            self.granularity = Granularity.parse(self.granularity).value
        except ValueError as e:
            raise ConfigurationError(f"QuantConfig: {e}")


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def _quantize_group(values: np.ndarray, bits: QuantBits, value_range: Optional[Tuple[float, float]] = None):
    w_min, w_max = value_range if value_range is not None else (float(values.min()), float(values.max()))
    if w_max == w_min:
        return np.zeros(values.shape, dtype=np.int8), QuantParams(w_min, w_max, bits.value)
    scaled = (values - w_min) / (w_max - w_min) * bits.levels
    codes = np.clip(round_half_away(scaled) - bits.offset, bits.code_min, bits.code_max)
    return codes.astype(np.int8), QuantParams(w_min, w_max, bits.value)


def quantize_tensor(
    weight: Tensor,
    bits: Union[int, QuantBits] = QuantBits.INT8,
    granularity: Union[Text, Granularity] = Granularity.PER_TENSOR,
    value_range: Optional[Tuple[float, float]] = None,
) -> QuantTensor:
    """code = round((w - min) / (max - min) * levels) - offset, rounding half away from zero.

    A constant group (max == min) gets code 0 everywhere and dequantizes to the constant.

    Args:
        weight (Tensor): non-empty tensor.
        bits (int, optional): 8 or 4. Defaults to 8.
        granularity (optional): per_tensor, or per_channel over the leading axis.
        value_range (Tuple[float, float], optional): (min, max) to use instead of the
            tensor's own range; per_tensor only, and it must cover every weight.

    Returns:
        QuantTensor: codes with one QuantParams per group.
    """
    if weight.size == 0:
        raise UsageError("Quantize: cannot quantize an empty tensor")
    bits = QuantBits(int(bits))
    granularity = Granularity.parse(granularity)
    values = weight.data.astype(np.float64)
    if granularity == Granularity.PER_TENSOR or values.ndim == 0:
        if value_range is not None and (values.min() < value_range[0] or values.max() > value_range[1]):
            raise UsageError(f"Quantize: range {value_range} does not cover the tensor")
        codes, qp = _quantize_group(values, bits, value_range)
        return QuantTensor(codes, [qp], None)
    if value_range is not None:
        raise UsageError("Quantize: an explicit range only applies to per_tensor quantization")
    groups = [_quantize_group(row, bits) for row in values]
    return QuantTensor(np.stack([codes for codes, _ in groups]), [qp for _, qp in groups], 0)


def _dequantize_group(codes: np.ndarray, qp: QuantParams) -> np.ndarray:
    bits = QuantBits(qp.bits)
    codes = codes.astype(np.float64)
    values = (codes + bits.offset) / bits.levels * (qp.w_max - qp.w_min) + qp.w_min
    if qp.w_max == qp.w_min:
        return np.full(codes.shape, qp.w_min)
    values = np.where(codes == bits.code_min, qp.w_min, values)
    return np.where(codes == bits.code_max, qp.w_max, values)


def dequantize(quantized: QuantTensor, dtype=np.float32) -> Tensor:
    """w = (code + offset) / levels * (max - min) + min; endpoint codes map to min/max exactly."""
    bits = QuantBits(quantized.bits)
    codes = np.asarray(quantized.codes)
    if codes.size and (codes.min() < bits.code_min or codes.max() > bits.code_max):
        raise DataCorruptionError(f"Dequantize: codes outside the int{bits.value} range [{bits.code_min}, {bits.code_max}]")
    if quantized.axis is None:
        values = _dequantize_group(codes, quantized.qp)
    else:
        values = np.stack([_dequantize_group(row, qp) for row, qp in zip(codes, quantized.params)])
    return Tensor(values, dtype=dtype)


def _quantize_conv(conv, bits: QuantBits, granularity: Granularity, value_range: Optional[Tuple[float, float]] = None):
    if conv is None or isinstance(conv, QuantizedConvParams):
        return conv
    return QuantizedConvParams(quantize_tensor(conv.weight, bits, granularity, value_range), conv.bias, conv.stride, conv.padding)


def _shared_ranges(graph: "ModelGraph") -> Dict[Text, Tuple[float, float]]:
    """One (min, max) per group of float conv slots linked by shared rows, keyed by slot."""
    groups: Dict[Text, Set[Text]] = {}
    for item in graph.shared:
        group = groups.get(item.slot_a, {item.slot_a}) | groups.get(item.slot_b, {item.slot_b})
        for slot in group:
            groups[slot] = group
    ranges = {}
    for slot, group in groups.items():
        convs = [graph.get(member) for member in sorted(group)]
        if any(not isinstance(conv, ConvParams) for conv in convs):
            continue
        ranges[slot] = (
            min(float(conv.weight.data.min()) for conv in convs),
            max(float(conv.weight.data.max()) for conv in convs),
        )
    return ranges


def _row_params(quantized: QuantTensor, row: int) -> QuantParams:
    return quantized.qp if quantized.axis is None else quantized.params[row]


def quantize_model(
    graph: "ModelGraph", bits: Union[int, QuantBits] = QuantBits.INT8, granularity: Union[Text, Granularity] = Granularity.PER_CHANNEL
) -> "ModelGraph":
    """Replace every conv/linear weight by integer codes (biases stay float).

    Forward then runs on dequantized weights. Per tensor, conv slots linked by shared
    rows are quantized over their joint range so a shared row gets the same codes and
    the same parameters in both branches. A shared row stays shared only when that holds.
    """
    bits = QuantBits(int(bits))
    granularity = Granularity.parse(granularity)
    ranges = _shared_ranges(graph) if granularity == Granularity.PER_TENSOR else {}
    nodes = []
    for node in graph.nodes:
        params = node.params
        if isinstance(params, ConvParams):
            quantized = _quantize_conv(params, bits, granularity, ranges.get(node.id))
            node = node.replace(kind=LayerKind.QUANTIZED_CONV, params=quantized)
        elif isinstance(params, LinearParams):
            quantized = QuantizedLinearParams(quantize_tensor(params.weight, bits, granularity), params.bias)
            node = node.replace(kind=LayerKind.QUANTIZED_LINEAR, params=quantized)
        elif isinstance(params, ResidualBlockParams):
            changes = {
                "conv1": _quantize_conv(params.conv1, bits, granularity, ranges.get(f"{node.id}.conv1")),
                "conv2": _quantize_conv(params.conv2, bits, granularity, ranges.get(f"{node.id}.conv2")),
            }
            if params.downsample is not None:
                changes["downsample"] = params.downsample.__class__(
                    _quantize_conv(params.downsample.conv, bits, granularity, ranges.get(f"{node.id}.downsample.conv")),
                    params.downsample.bn,
                )
            node = node.replace(params=params.replace(**changes))
        nodes.append(node)
    quantized_graph = graph.rebuild(nodes=nodes, shared=[])

    kept_shared = []
    for item in graph.shared:
        a, b = quantized_graph.get(item.slot_a).weight, quantized_graph.get(item.slot_b).weight
        same_codes = np.array_equal(a.codes[item.row_a], b.codes[item.row_b])
        if same_codes and _row_params(a, item.row_a) == _row_params(b, item.row_b):
            kept_shared.append(item)
        else:
            logging.warning(f"Quantize: {item.slot_b}[{item.row_b}] no longer matches {item.slot_a}[{item.row_a}], storing both")
    result = quantized_graph.rebuild(shared=kept_shared)
    logging.info(f"Quantize: int{bits.value} {granularity.value}, weights {graph.weight_bytes():.0f} -> {result.weight_bytes():.0f} bytes")
    return result
