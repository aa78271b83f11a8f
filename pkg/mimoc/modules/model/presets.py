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
Date: May 8th 2024
Description:
    Preset graph builders with seeded He-style initialisation
"""

import logging
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Text, Tuple

import numpy as np

from mimoc.enums import LayerKind, Preset
from mimoc.exceptions import UsageError
from mimoc.modules.model.graph import ModelGraph
from mimoc.modules.model.layers import Downsample, LayerNode, LinearParams, ResidualBlockParams
from mimoc.modules.tensor import BnParams, ConvParams, Tensor

MINI_SIZE = 16
PAPER_SIZE = 33
HEAD_CLASSES = OrderedDict([("emotion", 4), ("gender", 2)])
PAPER_HEAD_CLASSES = OrderedDict([("emotion", 8), ("gender", 2)])
MINI_TRUNK = (64, 64, 32)
PAPER_TRUNK = (2048, 512, 256)


class _Initializer:
    """Seeded uniform fan-in initialisation: weights in +-sqrt(6 / fan_in), biases in +-1 / sqrt(fan_in)."""

    def __init__(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def _uniform(self, shape: Tuple[int, ...], bound: float) -> Tensor:
        return Tensor(self.rng.uniform(-bound, bound, size=shape))

    def conv(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0) -> ConvParams:
        fan_in = c_in * kernel * kernel
        weight = self._uniform((c_out, c_in, kernel, kernel), np.sqrt(6.0 / fan_in))
        return ConvParams(weight, self._uniform((c_out,), 1.0 / np.sqrt(fan_in)), stride, padding)

    def linear(self, f_in: int, f_out: int) -> LinearParams:
        weight = self._uniform((f_out, f_in), np.sqrt(6.0 / f_in))
        return LinearParams(weight, self._uniform((f_out,), 1.0 / np.sqrt(f_in)))


def _block(init: _Initializer, c_in: int, c_out: int, stride: int, mini: bool) -> ResidualBlockParams:
    if mini and stride == 2:
        conv1 = init.conv(c_in, c_out, 4, stride=2, padding=1)
        downsample = Downsample(init.conv(c_in, c_out, 2, stride=2), BnParams.identity(c_out))
    else:
        conv1 = init.conv(c_in, c_out, 3, stride=stride, padding=1)
        downsample = None
        if stride != 1 or c_in != c_out:
            downsample = Downsample(init.conv(c_in, c_out, 1, stride=stride), BnParams.identity(c_out))
    conv2 = init.conv(c_out, c_out, 3, padding=1)
    return ResidualBlockParams(conv1, BnParams.identity(c_out), conv2, BnParams.identity(c_out), downsample)


def _branch(init: _Initializer, name: Text, channels: int, mini: bool) -> List[LayerNode]:
    """Stem (conv, bn, relu), residual stages, then global average pooling."""
    if mini:
        stem = init.conv(channels, 8, 3, padding=1)
        stages = [(8, 8, 1), (8, 16, 2)]
    else:
        stem = init.conv(channels, 64, 7, stride=2, padding=3)
        stages = [(64, 64, 1), (64, 64, 1), (64, 128, 2), (128, 128, 1), (128, 256, 2), (256, 256, 1), (256, 512, 2), (512, 512, 1)]
    nodes = [
        LayerNode(f"{name}_stem_conv", LayerKind.CONV, stem, [name]),
        LayerNode(f"{name}_stem_bn", LayerKind.BN, BnParams.identity(stem.out_channels), [f"{name}_stem_conv"]),
        LayerNode(f"{name}_stem_relu", LayerKind.RELU, None, [f"{name}_stem_bn"]),
    ]
    previous = f"{name}_stem_relu"
    for index, (c_in, c_out, stride) in enumerate(stages, start=1):
        block_id = f"{name}_block{index}"
        nodes.append(LayerNode(block_id, LayerKind.RESIDUAL_BLOCK, _block(init, c_in, c_out, stride, mini), [previous]))
        previous = block_id
    nodes.append(LayerNode(f"{name}_pool", LayerKind.GLOBAL_POOL, None, [previous]))
    return nodes


def _trunk(init: _Initializer, features: int, widths: Sequence[int], source: Text) -> List[LayerNode]:
    nodes = []
    for index, width in enumerate(widths, start=1):
        nodes.append(LayerNode(f"fc{index}", LayerKind.LINEAR, init.linear(features, width), [source]))
        nodes.append(LayerNode(f"fc{index}_relu", LayerKind.RELU, None, [f"fc{index}"]))
        features, source = width, f"fc{index}_relu"
    return nodes


def _assemble(
    init: _Initializer,
    inputs: Dict[Text, int],
    heads: Dict[Text, int],
    size: int,
    mini: bool,
    trunk: Sequence[int],
    metadata: Dict,
) -> ModelGraph:
    nodes: List[LayerNode] = []
    branches = OrderedDict()
    pooled = []
    for name, channels in inputs.items():
        branch = _branch(init, name, channels, mini)
        nodes.extend(branch)
        branches[name] = [node.id for node in branch]
        pooled.append(branch[-1])
    if len(pooled) == 2:
        nodes.append(LayerNode("fusion", LayerKind.CONCAT, None, [pooled[0].id, pooled[1].id]))
        source = "fusion"
    else:
        source = pooled[0].id
    features = sum(_branch_width(node, nodes) for node in pooled)
    nodes.extend(_trunk(init, features, trunk, source))
    for head, classes in heads.items():
        nodes.append(LayerNode(head, LayerKind.LINEAR, init.linear(trunk[-1], classes), [f"fc{len(trunk)}_relu"]))
    return ModelGraph(
        nodes,
        OrderedDict((name, (channels, size, size)) for name, channels in inputs.items()),
        list(heads),
        branches=branches,
        metadata=metadata,
    )


def _branch_width(pool: LayerNode, nodes: List[LayerNode]) -> int:
    block = next(node for node in nodes if node.id == pool.inputs[0])
    return block.params.channels


def build_preset(
    name,
    seed: int,
    input_name: Optional[Text] = None,
    head: Optional[Text] = None,
) -> ModelGraph:
    """Build a preset graph; identical (name, seed) pairs give bit-identical graphs.

    Args:
        name: 'mini-mimo', 'mini-miso', 'mini-siso' or 'paper-mimo'.
        seed (int): initialisation seed.
        input_name (Text, optional): input kept by mini-siso ('image' or 'audio'). Defaults to 'image'.
        head (Text, optional): head kept by mini-miso and mini-siso. Defaults to 'emotion'.

    Raises:
        UsageError: unknown preset, input or head.
    """
    try:
        preset = Preset(str(name))
    except ValueError:
        raise UsageError(f"Build Preset: unknown preset '{name}', expected one of {[p.value for p in Preset]}")
    input_name = input_name or "image"
    head = head or "emotion"
    if input_name not in ("image", "audio"):
        raise UsageError(f"Build Preset: unknown input '{input_name}'")
    if head not in HEAD_CLASSES:
        raise UsageError(f"Build Preset: unknown head '{head}'")

    init = _Initializer(seed)
    metadata = {"preset": preset.value, "seed": int(seed)}
    if preset == Preset.PAPER_MIMO:
        graph = _assemble(init, OrderedDict([("image", 3), ("audio", 1)]), PAPER_HEAD_CLASSES, PAPER_SIZE, False, PAPER_TRUNK, metadata)
    elif preset == Preset.MINI_MIMO:
        graph = _assemble(init, OrderedDict([("image", 1), ("audio", 1)]), HEAD_CLASSES, MINI_SIZE, True, MINI_TRUNK, metadata)
    elif preset == Preset.MINI_MISO:
        metadata["head"] = head
        heads = OrderedDict([(head, HEAD_CLASSES[head])])
        graph = _assemble(init, OrderedDict([("image", 1), ("audio", 1)]), heads, MINI_SIZE, True, MINI_TRUNK, metadata)
    else:
        metadata.update({"head": head, "input": input_name})
        heads = OrderedDict([(head, HEAD_CLASSES[head])])
        graph = _assemble(init, OrderedDict([(input_name, 1)]), heads, MINI_SIZE, True, MINI_TRUNK, metadata)
    logging.info(f"Build Preset: {preset.value} (seed {seed}) with {graph.count_params()} parameters")
    return graph
