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
import pytest

from mimoc.enums import GateMode, LayerKind
from mimoc.exceptions import ConfigurationError, ShapeError, UsageError
from mimoc.modules.compression import vib
from mimoc.modules.harness.training import objective
from mimoc.modules.model import LayerNode, ModelGraph
from mimoc.modules.model.presets import build_preset
from mimoc.modules.tensor import ConvParams, GradTape, Tensor
from tests.test_utils import perturb_bn, random_inputs, tiny_graph


@pytest.fixture(scope="module")
def mimo():
    return build_preset("mini-mimo", seed=3)


def test_forward_returns_every_head(mimo):
    outputs = mimo.forward(random_inputs(mimo, batch=5))
    assert list(outputs) == ["emotion", "gender"]
    assert outputs["emotion"].shape == (5, 4)
    assert outputs["gender"].shape == (5, 2)


def test_forward_is_deterministic(mimo):
    inputs = random_inputs(mimo, batch=3, seed=1)
    first, second = mimo.forward(inputs), mimo.forward(inputs)
    assert all(first[k].bit_equal(second[k]) for k in first)


def test_forward_selected_head_only(mimo):
    inputs = random_inputs(mimo, batch=2)
    only = mimo.forward(inputs, outputs=["gender"])
    assert list(only) == ["gender"]
    assert only["gender"].bit_equal(mimo.forward(inputs)["gender"])


def test_missing_input_raises_shape_error(mimo):
    inputs = random_inputs(mimo)
    del inputs["audio"]
    with pytest.raises(ShapeError):
        mimo.forward(inputs)


def test_wrong_input_shape_raises(mimo):
    inputs = random_inputs(mimo)
    inputs["image"] = Tensor(np.zeros((4, 1, 8, 8)))
    with pytest.raises(ShapeError):
        mimo.forward(inputs)


def test_unknown_head_raises(mimo):
    with pytest.raises(UsageError):
        mimo.forward(random_inputs(mimo), outputs=["age"])


def test_duplicate_ids_rejected():
    graph = tiny_graph()
    nodes = graph.nodes + [graph.nodes[2].replace()]
    with pytest.raises(ConfigurationError):
        ModelGraph(nodes, graph.inputs, graph.outputs)


def test_unknown_reference_rejected():
    graph = tiny_graph()
    nodes = [graph.nodes[0].replace(inputs=["nowhere"])] + graph.nodes[1:]
    with pytest.raises(ConfigurationError):
        ModelGraph(nodes, graph.inputs, graph.outputs)


def test_cycle_rejected():
    graph = tiny_graph()
    nodes = list(graph.nodes)
    nodes[2] = nodes[2].replace(inputs=["pool"])
    with pytest.raises(ConfigurationError):
        ModelGraph(nodes, graph.inputs, graph.outputs)


def test_shape_mismatch_found_at_build_time():
    graph = tiny_graph(channels=3)
    bad_head = tiny_graph(channels=5).node("head")
    nodes = graph.nodes[:-1] + [bad_head]
    with pytest.raises(ShapeError):
        ModelGraph(nodes, graph.inputs, graph.outputs)


def test_param_and_flop_counts_of_tiny_graph():
    graph = tiny_graph(channels=3, classes=2)
    # conv 3*9+3, bn gamma/beta 6, head 2*3+2
    assert graph.count_params() == 30 + 6 + 8
    conv = 2 * 3 * 1 * 9 * 36
    bn, relu, pool = 2 * 108, 108, 108
    head = 2 * 2 * 3
    assert graph.count_flops(batch=1) == conv + bn + relu + pool + head
    assert graph.count_flops(batch=2) == 2 * graph.count_flops(batch=1)


def test_memory_is_weights_plus_peak_activation():
    graph = tiny_graph()
    assert graph.memory_bytes() == graph.weight_bytes() + graph.activation_bytes()
    assert graph.weight_bytes() == 4 * (30 + 6 + 6 + 8)


def test_topological_order_respects_edges(mimo):
    position = {node.id: i for i, node in enumerate(mimo.topological_order())}
    for node in mimo.nodes:
        for ref in node.inputs:
            if ref in position:
                assert position[ref] < position[node.id]


def test_with_parameters_rejects_shape_change(mimo):
    name = next(iter(mimo.named_parameters()))
    with pytest.raises(ShapeError):
        mimo.with_parameters({name: Tensor(np.zeros((1,)))})


def test_with_parameters_returns_new_graph(mimo):
    params = mimo.named_parameters()
    name = "fc1.bias"
    changed = mimo.with_parameters({name: Tensor(np.zeros(params[name].shape))})
    assert changed is not mimo
    assert not mimo.get(name).bit_equal(changed.get(name))


def test_conv_slots_follow_branch_order(mimo):
    slots = mimo.conv_slots("image")
    assert slots[0] == "image_stem_conv"
    assert "image_block2.downsample.conv" in slots
    assert mimo.slot_bn_path("image_stem_conv") == "image_stem_bn"
    assert mimo.slot_bn_path("image_block1.conv2") == "image_block1.bn2"


def test_concat_node_needs_two_inputs():
    graph = tiny_graph()
    nodes = graph.nodes[:4] + [
        LayerNode("cat", LayerKind.CONCAT, None, ["pool"]),
        graph.nodes[4].replace(inputs=["cat"]),
    ]
    with pytest.raises(ShapeError):
        ModelGraph(nodes, graph.inputs, graph.outputs)


def _parameter_class(graph, name):
    field = name.rsplit(".", 1)[1]
    if field == "weight":
        return "conv_weight" if graph.get(name).ndim == 4 else "linear_weight"
    if field == "bias":
        return "conv_bias" if name.rsplit(".", 1)[0] in _conv_paths(graph) else "linear_bias"
    return field


def _conv_paths(graph):
    return {slot for branch in graph.branches for slot in graph.conv_slots(branch)}


def test_mini_mimo_gradients_match_finite_differences():
    graph = vib.insert_gates(perturb_bn(build_preset("mini-mimo", seed=1), seed=1)).astype(np.float64)
    rng = np.random.default_rng(0)
    inputs = {name: tensor.astype(np.float64) for name, tensor in random_inputs(graph, batch=2, seed=2).items()}
    targets = {"emotion": np.array([0, 3]), "gender": np.array([1, 0])}

    def loss_of(g):
        outputs = g.forward(inputs, mode=GateMode.TRAIN, noise_seed=11)
        return objective(g, outputs, targets, gamma_reg=0.1)

    params = graph.named_parameters()
    with GradTape() as tape:
        tape.watch_all(params)
        loss = loss_of(graph)
    grads = tape.backward(loss)

    samples = {}
    for name in params:
        samples.setdefault(_parameter_class(graph, name), []).append(name)
    assert set(samples) == {"conv_weight", "conv_bias", "linear_weight", "linear_bias", "gamma", "beta", "mu", "log_sigma2"}

    step = 1e-3
    for parameter_class, names in samples.items():
        analytic, numeric = [], []
        for name in map(str, rng.choice(names, size=min(3, len(names)), replace=False)):
            values = params[name].data
            for flat in rng.choice(values.size, size=min(2, values.size), replace=False):
                index = np.unravel_index(flat, values.shape)
                plus, minus = values.copy(), values.copy()
                plus[index] += step
                minus[index] -= step
                up = loss_of(graph.with_parameters({name: Tensor(plus, np.float64)})).item()
                down = loss_of(graph.with_parameters({name: Tensor(minus, np.float64)})).item()
                numeric.append((up - down) / (2 * step))
                analytic.append(float(grads[name].data[index]))
        analytic, numeric = np.array(analytic), np.array(numeric)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        assert np.linalg.norm(analytic - numeric) / scale <= 1e-3, parameter_class


def _all_conv_graph(seed=0):
    rng = np.random.default_rng(seed)
    first = ConvParams(Tensor(rng.normal(size=(4, 1, 3, 3))), Tensor(rng.normal(size=4)), padding=1)
    second = ConvParams(Tensor(rng.normal(size=(2, 4, 2, 2))), Tensor(rng.normal(size=2)), stride=2)
    nodes = [
        LayerNode("conv1", LayerKind.CONV, first, ["x"]),
        LayerNode("relu", LayerKind.RELU, None, ["conv1"]),
        LayerNode("conv2", LayerKind.CONV, second, ["relu"]),
    ]
    return ModelGraph(nodes, OrderedDict([("x", (1, 8, 8))]), ["conv2"])


@pytest.mark.parametrize("height,width", [(8, 8), (16, 12), (6, 10)])
def test_flops_scale_with_spatial_area(height, width):
    graph = _all_conv_graph()
    base = graph.count_flops(input_shapes={"x": (1, height, width)})
    doubled = graph.count_flops(input_shapes={"x": (1, 2 * height, 2 * width)})
    # H' and W' of every layer double, so each per-element term grows fourfold
    assert doubled == 4 * base
    ledger = graph.node_flops(input_shapes={"x": (1, height, width)})
    assert base == sum(ledger.values())
    assert ledger["conv1"] == 2 * 4 * 1 * 9 * height * width


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_node_declaration_order_does_not_change_outputs(mimo, seed):
    order = np.random.default_rng(seed).permutation(len(mimo.nodes))
    shuffled = mimo.rebuild(nodes=[mimo.nodes[i] for i in order])
    assert [node.id for node in shuffled.nodes] != [node.id for node in mimo.nodes]
    inputs = random_inputs(mimo, batch=3, seed=seed)
    expected, actual = mimo.forward(inputs), shuffled.forward(inputs)
    assert all(expected[head].bit_equal(actual[head]) for head in expected)
