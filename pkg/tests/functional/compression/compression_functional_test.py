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

import filecmp
import logging

import numpy as np
import pytest

from mimoc.factories import DatasetFactory, ModelFactory
from mimoc.modules.compression import bnfold, quant
from mimoc.modules.harness import metrics
from mimoc.modules.harness.pipeline import PipelineConfig, run_pipeline
from mimoc.modules.harness.training import TrainConfig
from mimoc.utils import config
from tests.test_utils import max_abs_diff, perturb_bn, random_inputs

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not config.RUN_SLOW, reason="desk-scale experiment; set MIMOC_RUN_SLOW=1"),
]

logger = logging.getLogger()
logger.setLevel(logging.INFO)


def _mean_accuracy(row):
    return float(np.mean([acc for acc in row.accuracy.values() if acc is not None]))


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    cfg = PipelineConfig(seed=7, ablation=True, output_dir=str(tmp_path_factory.mktemp("experiment")))
    return cfg, run_pipeline(cfg)


def test_vib_prunes_most_gated_channels(experiment):
    _, result = experiment
    assert result.mask_report.pruned_fraction >= 0.6
    base, pruned = result.report["train"], result.report["vib-prune"]
    for head in ("emotion", "gender"):
        assert base.accuracy[head] - pruned.accuracy[head] <= 2.0


def test_vib_beats_random_pruning(experiment):
    _, result = experiment
    assert _mean_accuracy(result.ablation["full"]) - _mean_accuracy(result.ablation["w/ RandPruning"]) >= 10.0


def test_merge_reduces_params_after_pruning(experiment):
    _, result = experiment
    assert result.report["merge"].params < result.report["fine-tune"].params
    assert result.ablation["full"].params < result.ablation["w/o MTZ"].params


def test_quantized_accuracy_close_to_float(experiment):
    cfg, result = experiment
    folded, int8 = result.report["fold-bn"], result.report["quantize"]
    for head in ("emotion", "gender"):
        assert abs(folded.accuracy[head] - int8.accuracy[head]) <= 1.0
    _, test_set = DatasetFactory.create_split(cfg.seed, cfg.n_samples)
    int4 = quant.quantize_model(ModelFactory.load(result.models["fold-bn"]), 4)
    accuracy = metrics.accuracy(int4, test_set)
    for head in ("emotion", "gender"):
        assert abs(folded.accuracy[head] - accuracy[head]) <= 5.0


def test_bn_fold_on_many_models():
    for seed in range(20):
        graph = perturb_bn(ModelFactory.create("mini-mimo", seed=seed), seed=seed)
        folded = bnfold.fold_graph(graph)
        for trial in range(20):
            inputs = random_inputs(graph, batch=1, seed=1000 * seed + trial)
            assert max_abs_diff(graph.forward(inputs), folded.forward(inputs)) <= 1e-5


def test_single_pass_serves_both_heads():
    _, test_set = DatasetFactory.create_split(7, 200)
    graph = ModelFactory.create("mini-mimo", seed=7)
    both, _ = metrics.latency(graph, test_set)
    one, _ = metrics.latency(graph, test_set, outputs=["emotion"])
    other, _ = metrics.latency(graph, test_set, outputs=["gender"])
    assert both < 2.0 * one
    assert both < one + other
    assert abs(ModelFactory.create("paper-mimo", seed=7).count_params() - 25.51e6) <= 0.1 * 25.51e6


def test_pipeline_rerun_is_bit_identical(tmp_path):
    runs = []
    for name in ("a", "b"):
        cfg = PipelineConfig(
            seed=3, n_samples=200, train=TrainConfig(epochs=3, seed=3), fine_tune_epochs=1, output_dir=str(tmp_path / name), latency_passes=5
        )
        runs.append(run_pipeline(cfg))
    a, b = runs
    assert [row.accuracy for row in a.report.rows] == [row.accuracy for row in b.report.rows]
    assert a.mask_report.to_dict() == b.mask_report.to_dict()
    assert a.merge_report.to_dict() == b.merge_report.to_dict()
    for stage, path in a.models.items():
        assert filecmp.cmp(path, b.models[stage], shallow=False)
