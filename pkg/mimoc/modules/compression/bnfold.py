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
Date: May 20th 2024
Description:
    Batch-norm folding into the preceding convolution
"""

import logging
from typing import Dict, List, Text

import numpy as np

from mimoc.enums import LayerKind
from mimoc.exceptions import ShapeError
from mimoc.modules.model.graph import ModelGraph
from mimoc.modules.model.layers import BiasedConvParams, Downsample, LayerNode, QuantizedConvParams, ResidualBlockParams
from mimoc.modules.tensor import BnParams, ConvParams, Tensor


def fold_bn(conv: ConvParams, bn: BnParams) -> BiasedConvParams:
    """Collapse bn(conv(x)) into one biased convolution.

    With s_i = gamma_i / sqrt(var_i + eps):
        weight'_i = s_i * weight_i
        bias'_i = beta_i + s_i * (bias_i - mean_i)
    """
    if bn.channels != conv.out_channels:
        raise ShapeError("BN channel count differs from conv out_channels", (conv.out_channels,), (bn.channels,))
    dtype = conv.weight.dtype
    scale = bn.scale()
    weight = conv.weight.data.astype(np.float64) * scale[:, None, None, None]
    bias = bn.beta.data.astype(np.float64) + scale * (conv.bias.data.astype(np.float64) - bn.mean.data.astype(np.float64))
    return BiasedConvParams(Tensor(weight, dtype=dtype), Tensor(bias, dtype=dtype), conv.stride, conv.padding)


def _fold_pair(conv, bn, where: Text, folded: List[Text]):
    if conv is None or bn is None:
        return conv, bn
    if isinstance(conv, QuantizedConvParams):
        logging.warning(f"Fold BN: {where} is quantized, its batch-norm is left in place")
        return conv, bn
    folded.append(where)
    return fold_bn(conv, bn), None


def _fold_block(node_id: Text, block: ResidualBlockParams, folded: List[Text]) -> ResidualBlockParams:
    conv1, bn1 = _fold_pair(block.conv1, block.bn1, f"{node_id}.conv1", folded)
    conv2, bn2 = _fold_pair(block.conv2, block.bn2, f"{node_id}.conv2", folded)
    downsample = block.downsample
    if downsample is not None:
        conv, bn = _fold_pair(downsample.conv, downsample.bn, f"{node_id}.downsample.conv", folded)
        downsample = Downsample(conv, bn)
    return block.replace(conv1=conv1, bn1=bn1, conv2=conv2, bn2=bn2, downsample=downsample)


def fold_graph(graph: ModelGraph) -> ModelGraph:
    """Replace every conv whose only consumer is a bn by a biased conv and drop the bn.

    Batch-norms inside residual blocks are folded into their block convolutions. A bn
    whose producer is not a conv, or whose conv feeds other nodes too, is left in place.
    Folding an already folded graph returns an equal graph.
    """
    folded: List[Text] = []
    renamed: Dict[Text, Text] = {}
    replacements: Dict[Text, LayerNode] = {}
    for node in graph.nodes:
        if node.kind == LayerKind.BN:
            producer = graph.node(node.inputs[0]) if node.inputs and node.inputs[0] in graph else None
            foldable = (
                producer is not None
                and producer.kind in (LayerKind.CONV, LayerKind.BIASED_CONV)
                and graph.consumers(producer.id) == [node.id]
            )
            if not foldable:
                logging.info(f"Fold BN: '{node.id}' has no exclusive conv producer, left in place")
                continue
            params = fold_bn(producer.params, node.params)
            replacements[producer.id] = producer.replace(kind=LayerKind.BIASED_CONV, params=params)
            renamed[node.id] = producer.id
            folded.append(producer.id)
        elif node.kind == LayerKind.RESIDUAL_BLOCK:
            replacements[node.id] = node.replace(params=_fold_block(node.id, node.params, folded))

    if not folded:
        return graph

    nodes = []
    for node in graph.nodes:
        if node.id in renamed:
            continue
        node = replacements.get(node.id, node)
        nodes.append(node.replace(inputs=[renamed.get(ref, ref) for ref in node.inputs]))
    outputs = [renamed.get(head, head) for head in graph.outputs]
    branches = {name: [ref for ref in ids if ref not in renamed] for name, ids in graph.branches.items()}
    logging.info(f"Fold BN: folded {len(folded)} conv+bn pairs, removed {len(renamed)} bn nodes")
    return graph.rebuild(nodes=nodes, outputs=outputs, branches=branches)
