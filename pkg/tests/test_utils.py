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

from collections import OrderedDict

import numpy as np

from mimoc.enums import LayerKind
from mimoc.modules.model import LayerNode, LinearParams, ModelGraph
from mimoc.modules.tensor import BnParams, ConvParams, Tensor


def tiny_graph(seed: int = 0, channels: int = 3, classes: int = 2) -> ModelGraph:
    """x[1, 6, 6] -> conv 3x3 -> bn -> relu -> pool -> linear 'head'."""
    rng = np.random.default_rng(seed)
    conv = ConvParams(Tensor(rng.normal(size=(channels, 1, 3, 3))), Tensor(rng.normal(size=channels)), padding=1)
    head = LinearParams(Tensor(rng.normal(size=(classes, channels))), Tensor(rng.normal(size=classes)))
    nodes = [
        LayerNode("conv", LayerKind.CONV, conv, ["x"]),
        LayerNode("bn", LayerKind.BN, BnParams.identity(channels), ["conv"]),
        LayerNode("relu", LayerKind.RELU, None, ["bn"]),
        LayerNode("pool", LayerKind.GLOBAL_POOL, None, ["relu"]),
        LayerNode("head", LayerKind.LINEAR, head, ["pool"]),
    ]
    return ModelGraph(nodes, OrderedDict([("x", (1, 6, 6))]), ["head"], branches={"x": ["conv", "bn", "relu", "pool"]})


def bn_paths(graph: ModelGraph):
    paths = []
    for node in graph.nodes:
        if node.kind == LayerKind.BN:
            paths.append(node.id)
        elif node.kind == LayerKind.RESIDUAL_BLOCK:
            for part in ("bn1", "bn2", "downsample.bn"):
                if graph.get(f"{node.id}.{part}") is not None:
                    paths.append(f"{node.id}.{part}")
    return paths


def perturb_bn(graph: ModelGraph, seed: int = 0) -> ModelGraph:
    """Random batch-norm statistics, so folding and merging have something to do."""
    rng = np.random.default_rng(seed)
    updates = {}
    for path in bn_paths(graph):
        c = graph.get(path).channels
        updates[path] = BnParams(
            gamma=Tensor(rng.uniform(0.5, 1.5, c)),
            beta=Tensor(rng.normal(0.0, 0.1, c)),
            mean=Tensor(rng.normal(0.0, 0.1, c)),
            var=Tensor(rng.uniform(0.5, 1.5, c)),
        )
    return graph.with_updates(updates)


def random_inputs(graph: ModelGraph, batch: int = 4, seed: int = 0):
    rng = np.random.default_rng(seed)
    return {name: Tensor(rng.normal(size=(batch,) + shape)) for name, shape in graph.inputs.items()}


def max_abs_diff(a, b) -> float:
    return max(float(np.max(np.abs(a[k].data.astype(np.float64) - b[k].data.astype(np.float64)))) for k in a)
