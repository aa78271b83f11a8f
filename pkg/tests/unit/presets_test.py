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

from mimoc.enums import LayerKind
from mimoc.exceptions import UsageError
from mimoc.modules.model.presets import build_preset
from mimoc.modules.model import serialization
from tests.test_utils import random_inputs


def test_mini_mimo_layout():
    graph = build_preset("mini-mimo", seed=7)
    assert list(graph.inputs) == ["image", "audio"]
    assert graph.inputs["image"] == (1, 16, 16)
    assert graph.outputs == ["emotion", "gender"]
    assert graph.branches["image"] == [
        "image_stem_conv",
        "image_stem_bn",
        "image_stem_relu",
        "image_block1",
        "image_block2",
        "image_pool",
    ]
    assert graph.node("fusion").kind == LayerKind.CONCAT
    assert graph.infer_shapes()["fusion"] == (1, 32)
    assert graph.node("fc1").params.in_features == 32
    assert graph.infer_shapes()["image_block2"] == (1, 16, 8, 8)


def test_mini_mimo_param_count():
    # per branch: stem 80 + bn 16 + block1 1200 + block2 5008; trunk 2112 + 4160 + 2080; heads 132 + 66
    assert build_preset("mini-mimo", seed=0).count_params() == 2 * 6304 + 8550


def test_same_seed_is_bit_identical():
    a = serialization.dumps(build_preset("mini-mimo", seed=11))
    b = serialization.dumps(build_preset("mini-mimo", seed=11))
    c = serialization.dumps(build_preset("mini-mimo", seed=12))
    assert a == b
    assert a != c


def test_initialisation_bounds():
    graph = build_preset("mini-mimo", seed=1)
    weight = graph.get("image_block1.conv1.weight").data
    bound = np.sqrt(6.0 / (8 * 9))
    assert np.all(np.abs(weight) <= bound)
    assert np.abs(weight).max() > 0.5 * bound
    bn = graph.get("image_stem_bn")
    assert np.all(bn.gamma.data == 1) and np.all(bn.var.data == 1)


def test_mini_miso_has_one_head():
    graph = build_preset("mini-miso", seed=0, head="gender")
    assert graph.outputs == ["gender"]
    assert graph.node("gender").params.out_features == 2
    assert graph.metadata["head"] == "gender"


def test_mini_siso_keeps_one_input():
    graph = build_preset("mini-siso", seed=0, input_name="audio", head="emotion")
    assert list(graph.inputs) == ["audio"]
    assert "fusion" not in graph
    assert graph.node("fc1").params.in_features == 16


@pytest.mark.parametrize("kwargs", [{"name": "maxi-mimo"}, {"name": "mini-siso", "input_name": "video"}, {"name": "mini-miso", "head": "age"}])
def test_unknown_names_rejected(kwargs):
    name = kwargs.pop("name")
    with pytest.raises(UsageError):
        build_preset(name, seed=0, **kwargs)


def test_paper_mimo_parameter_count():
    graph = build_preset("paper-mimo", seed=0)
    assert graph.inputs["image"] == (3, 33, 33)
    assert graph.outputs == ["emotion", "gender"]
    assert abs(graph.count_params() - 25.51e6) <= 0.1 * 25.51e6


@pytest.mark.parametrize("name", ["mini-mimo", "mini-miso", "mini-siso", "paper-mimo"])
@pytest.mark.parametrize("batch", [1, 2, 7])
def test_forward_shapes_match_declared_heads(name, batch):
    graph = build_preset(name, seed=0)
    declared = graph.infer_shapes(batch)
    outputs = graph.forward(random_inputs(graph, batch=batch))
    assert list(outputs) == graph.outputs
    for head, logits in outputs.items():
        assert logits.shape == declared[head]
        assert logits.shape == (batch, graph.node(head).params.out_features)
