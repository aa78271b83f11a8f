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

from mimoc.enums import LayerKind
from mimoc.exceptions import PruneError, UsageError
from mimoc.modules.compression import vib
from mimoc.modules.harness.dataset import gen_dataset
from mimoc.modules.harness.training import TrainConfig
from mimoc.modules.model import GateParams, KeptChannels, SharedNeuron
from mimoc.modules.model.presets import build_preset
from mimoc.modules.tensor import Tensor
from tests.test_utils import max_abs_diff, perturb_bn, random_inputs

FC_GATES = ["fc1_gate", "fc2_gate", "fc3_gate"]


def _gated(seed=0, dtype=np.float64):
    graph = perturb_bn(build_preset("mini-mimo", seed=seed), seed=seed).astype(dtype)
    gated = vib.insert_gates(graph)
    rng = np.random.default_rng(seed)
    mus = {
        name: Tensor(rng.uniform(0.5, 1.5, tensor.shape), dtype)
        for name, tensor in gated.named_parameters().items()
        if name.endswith(".mu")
    }
    return graph, gated.with_parameters(mus)


def _half_masks(gated, seed=0):
    rng = np.random.default_rng(seed)
    masks = OrderedDict()
    for path, gate in gated.gates().items():
        keep = max(1, gate.channels // 2)
        masks[path] = KeptChannels(gate.channels, sorted(int(k) for k in rng.choice(gate.channels, keep, replace=False)))
    return masks


def _inputs(graph, dtype=np.float64):
    return {name: tensor.astype(dtype) for name, tensor in random_inputs(graph, batch=3, seed=9).items()}


def test_insert_gates_sites():
    graph = build_preset("mini-mimo", seed=0)
    gated = vib.insert_gates(graph)
    paths = list(gated.gates())
    assert len(paths) == 2 * 2 * 2 + 3
    assert "image_block1.gate1" in paths and "audio_block2.gate2" in paths
    assert [p for p in paths if not p.endswith((".gate1", ".gate2"))] == FC_GATES
    assert gated.node("fc1_relu").inputs == ["fc1_gate"]
    assert gated.node("image_block2").params.downsample is not None


def test_fresh_gates_are_identity_in_eval_mode():
    graph = build_preset("mini-mimo", seed=1)
    gated = vib.insert_gates(graph)
    inputs = random_inputs(graph)
    assert max_abs_diff(graph.forward(inputs), gated.forward(inputs)) == 0.0
    removed = vib.remove_gates(gated)
    assert len(removed) == len(graph)
    assert max_abs_diff(graph.forward(inputs), removed.forward(inputs)) == 0.0


def test_gate_params_counted_only_while_present():
    graph = build_preset("mini-mimo", seed=0)
    gated = vib.insert_gates(graph)
    gate_params = sum(2 * gate.channels for gate in gated.gates().values())
    assert gated.count_params() == graph.count_params() + gate_params


def test_threshold_is_strict():
    gate = GateParams(Tensor([1.0, 0.5, 0.0]), Tensor([0.0, 0.0, 0.0]))
    mask = vib.compute_mask(gate, vib.VibConfig(tau=0.25))
    assert mask.kept == [0]


def test_empty_fc_mask_raises_prune_error():
    gate = GateParams(Tensor([0.0, 0.0]), Tensor([0.0, 0.0]))
    with pytest.raises(PruneError):
        vib.compute_mask(gate, vib.VibConfig(), layer="fc1_gate")
    assert vib.compute_mask(gate, vib.VibConfig(), allow_empty=True).count == 0


def test_kept_count_monotone_in_tau():
    _, gated = _gated(seed=2)
    assert vib.monotone_in_tau(gated, [1e-3, 1e-2, 0.1, 1.0, 10.0])


def test_pruned_graph_matches_masked_gated_graph():
    _, gated = _gated(seed=3)
    masked = vib.apply_masks(gated, _half_masks(gated, seed=3))
    pruned = vib.prune_structural(masked)
    inputs = _inputs(gated)
    assert max_abs_diff(masked.forward(inputs), pruned.forward(inputs)) < 1e-8
    assert pruned.count_params() < vib.remove_gates(gated).count_params()
    assert not pruned.gates()
    blocks = [node.params for node in pruned.nodes if node.kind == LayerKind.RESIDUAL_BLOCK]
    assert all(block.recover_mask is not None for block in blocks)


def test_float32_pruning_within_tolerance():
    _, gated = _gated(seed=4, dtype=np.float32)
    masked = vib.apply_masks(gated, _half_masks(gated, seed=4))
    pruned = vib.prune_structural(masked)
    inputs = _inputs(gated, np.float32)
    assert max_abs_diff(masked.forward(inputs), pruned.forward(inputs)) < 1e-4


def test_fc_pruning_slices_the_next_linear():
    _, gated = _gated(seed=5)
    masks = _half_masks(gated, seed=5)
    pruned = vib.prune_structural(vib.apply_masks(gated, masks))
    assert pruned.node("fc1").params.out_features == masks["fc1_gate"].count
    assert pruned.node("fc2").params.in_features == masks["fc1_gate"].count
    assert pruned.node("emotion").params.in_features == masks["fc3_gate"].count


@pytest.mark.parametrize("gate", ["gate1", "gate2"])
def test_fully_pruned_block_gate(gate):
    _, gated = _gated(seed=6)
    masks = OrderedDict((path, KeptChannels.all(g.channels)) for path, g in gated.gates().items())
    masks[f"image_block1.{gate}"] = KeptChannels(8, [])
    masked = vib.apply_masks(gated, masks)
    pruned = vib.prune_structural(masked)
    block = pruned.node("image_block1").params
    assert block.conv1 is None and block.conv2 is None
    assert (block.main_bias is not None) == (gate == "gate1")
    inputs = _inputs(gated)
    assert max_abs_diff(masked.forward(inputs), pruned.forward(inputs)) < 1e-8


def test_empty_fc_gate_cannot_be_pruned():
    _, gated = _gated(seed=7)
    masks = {"fc2_gate": KeptChannels(64, [])}
    with pytest.raises(PruneError):
        vib.prune_structural(gated, masks)


def test_shared_graph_cannot_be_pruned():
    graph = build_preset("mini-mimo", seed=0)
    shared = graph.rebuild(shared=[SharedNeuron("image_stem_conv", 0, "audio_stem_conv", 0)])
    with pytest.raises(UsageError):
        vib.prune_structural(vib.insert_gates(shared))


def test_random_masks_keep_the_same_counts():
    _, gated = _gated(seed=8)
    reference = _half_masks(gated, seed=8)
    randomized = vib.random_masks(reference, seed=1)
    assert [m.count for m in randomized.values()] == [m.count for m in reference.values()]
    assert randomized != reference


def test_mask_report_sorted_and_summarised():
    _, gated = _gated(seed=9)
    masks = OrderedDict((path, KeptChannels.all(g.channels)) for path, g in gated.gates().items())
    masks["audio_block1.gate1"] = KeptChannels(8, [0, 1])
    masks["fc1_gate"] = KeptChannels(64, list(range(16)))
    report = vib.MaskReport.build(gated, masks)
    assert report.rows[0].layer == "audio_block1.gate1"
    assert report.rows[0].branch == "audio"
    assert report.rows[1].branch == "trunk"
    assert report.top("audio", 1) == [75.0]
    assert "audio: (75.0%" in report.top_lines()[0]
    total = sum(g.channels for g in gated.gates().values())
    assert report.pruned_fraction == pytest.approx((6 + 48) / total)
    assert list(report.to_frame().columns) == ["layer", "branch", "original", "kept", "percent_pruned"]


def test_vib_config_validation():
    with pytest.raises(ValueError):
        vib.VibConfig(tau=0.0)
    with pytest.raises(TypeError):
        vib.VibConfig(epochs=1.5)
    assert vib.VibConfig().regularizer_weight(10) == pytest.approx(1e-4)
    assert vib.VibConfig(gamma_reg=0.3).regularizer_weight(10) == 0.3


def test_train_vib_returns_masked_gated_graph():
    dataset = gen_dataset(1, 48)
    result = vib.train_vib(build_preset("mini-mimo", seed=0), dataset, vib.VibConfig(epochs=1), TrainConfig(epochs=1, batch_size=16))
    assert len(result.losses) == 1
    assert set(result.masks) == set(result.graph.gates())
    assert all(gate.mask is not None for gate in result.graph.gates().values())
    assert len(result.report.rows) == 11
