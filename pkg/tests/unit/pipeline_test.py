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

import os

import pytest
import yaml

from mimoc.exceptions import ConfigurationError, StageError
from mimoc.modules.compression.mtz import MergeConfig
from mimoc.modules.compression.vib import VibConfig
from mimoc.modules.harness.pipeline import PipelineConfig, run_pipeline
from mimoc.modules.harness.training import TrainConfig
from mimoc.modules.model import serialization


def _config(tmp_path, **changes):
    values = dict(
        n_samples=40,
        seed=3,
        train=TrainConfig(epochs=1, seed=3),
        vib=VibConfig(epochs=1),
        fine_tune_epochs=1,
        merge=MergeConfig(budget="0.25", calib=8),
        output_dir=str(tmp_path),
        latency_passes=2,
        latency_warmup=0,
    )
    values.update(changes)
    return PipelineConfig(**values)


def test_train_then_evaluate(tmp_path):
    result = run_pipeline(_config(tmp_path, stages=["train", "evaluate"]))
    assert [row.method for row in result.report.rows] == ["train", "evaluate"]
    assert result.report["train"].params == result.report["evaluate"].params
    assert os.path.basename(result.models["train"]) == "00_train.mimo"
    assert os.path.basename(result.models["evaluate"]) == "01_evaluate.mimo"
    assert result.mask_report is None and result.merge_report is None


def test_full_pipeline_writes_models_and_reports(tmp_path):
    result = run_pipeline(_config(tmp_path))
    stages = ["train", "vib-prune", "fine-tune", "merge", "fold-bn", "quantize", "evaluate"]
    assert [row.method for row in result.report.rows] == stages
    for index, stage in enumerate(stages):
        path = tmp_path / f"{index:02d}_{stage}.mimo"
        assert path.exists()
        assert serialization.load(str(path)).metadata["stage"] == stage
    for name in ("report.txt", "report.yaml", "summary.md"):
        assert (tmp_path / name).exists()
    data = yaml.safe_load((tmp_path / "report.yaml").read_text())
    assert [row["method"] for row in data["stages"]] == stages
    assert data["merge"]["params_after"] < data["merge"]["params_before"]
    assert result.report["merge"].params < result.report["fine-tune"].params
    assert result.report["quantize"].memory_bytes < result.report["fold-bn"].memory_bytes
    assert result.report["train"].compression_rate == pytest.approx(0.0)


def test_ablation_rows(tmp_path):
    result = run_pipeline(_config(tmp_path, ablation=True))
    methods = [row.method for row in result.ablation.rows]
    assert methods == ["full", "w/o VIB", "w/o MTZ", "w/o PTQ", "w/ RandPruning"]
    assert result.ablation["w/o MTZ"].params > result.ablation["full"].params
    assert result.ablation["w/o PTQ"].memory_bytes > result.ablation["full"].memory_bytes
    assert "## Ablation" in (tmp_path / "summary.md").read_text()


def test_failing_stage_names_last_good_model(tmp_path):
    cfg = _config(tmp_path, stages=["train", "merge"], merge=MergeConfig(budget="stem_conv=99"))
    with pytest.raises(StageError) as error:
        run_pipeline(cfg)
    assert error.value.stage == "merge"
    assert error.value.last_good_model.endswith("00_train.mimo")
    assert isinstance(error.value.cause, ConfigurationError)
    assert error.value.exit_code == 2


@pytest.mark.parametrize(
    "changes",
    [
        {"n_samples": 4},
        {"stages": ["train", "merge", "vib-prune"]},
        {"stages": ["merge"]},
        {"stages": ["train", "compress"]},
        {"fine_tune_lr_scale": -1.0},
    ],
)
def test_config_value_errors(changes):
    with pytest.raises(ValueError):
        PipelineConfig(**changes)


def test_config_type_error():
    with pytest.raises(TypeError):
        PipelineConfig(seed="7")


def test_config_from_yaml(tmp_path):
    path = tmp_path / "pipeline.yaml"
    path.write_text("seed: 11\nn_samples: 64\nstages: [train, evaluate]\ntrain:\n  epochs: 2\nmerge:\n  budget: 'stem_conv=2'\n")
    cfg = PipelineConfig.from_yaml(str(path))
    assert cfg.seed == 11 and cfg.n_samples == 64
    assert cfg.train.epochs == 2
    assert cfg.merge.budget == "stem_conv=2"
    assert cfg.quant.bits == 8


@pytest.mark.parametrize("text", ["n_samples: 4\n", "stages: [merge]\n", "seed: [unclosed\n"])
def test_bad_yaml_is_configuration_error(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_yaml(str(path))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_yaml(str(tmp_path / "missing.yaml"))
