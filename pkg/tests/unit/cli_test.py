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
import yaml
from click.testing import CliRunner

from mimoc.cli_groups import cli
from mimoc.modules.model import serialization
from mimoc.modules.model.presets import build_preset
from mimoc.modules.tensor import Tensor
from mimoc.utils import config


@pytest.fixture(autouse=True)
def quiet_progress(monkeypatch):
    monkeypatch.setattr(config, "DISABLE_PROGRESS", True)


def _invoke(args):
    return CliRunner().invoke(cli, [str(arg) for arg in args])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "base.mimo"
    result = _invoke(["train", "--out", path, "--samples", 40, "--epochs", 1, "--seed", 2])
    assert result.exit_code == 0, result.output
    return path


def test_train_echoes_summary(trained):
    graph = serialization.load(str(trained))
    assert graph.count_params() == 21158
    assert list(graph.outputs) == ["emotion", "gender"]


def test_train_with_gates_keeps_them(tmp_path):
    out = tmp_path / "gated.mimo"
    result = _invoke(["train", "--out", out, "--samples", 40, "--epochs", 1, "--vib", "--vib-epochs", 1])
    assert result.exit_code == 0, result.output
    assert len(serialization.load(str(out)).gates()) == 11
    pruned = tmp_path / "pruned.mimo"
    result = _invoke(["prune", "--model", out, "--out", pruned, "--tau", "1e-2"])
    assert result.exit_code == 0, result.output
    assert len(serialization.load(str(pruned)).gates()) == 0


def test_eval_prints_row(trained):
    result = _invoke(["eval", "--model", trained, "--samples", 40, "--passes", 2, "--warmup", 0])
    assert result.exit_code == 0, result.output
    row = yaml.safe_load(result.output)
    assert row["params"] == 21158
    assert row["latency_ms"] > 0


def test_fold_quantize_chain(trained, tmp_path):
    folded, quantized = tmp_path / "folded.mimo", tmp_path / "q.mimo"
    assert _invoke(["fold-bn", "--model", trained, "--out", folded]).exit_code == 0
    result = _invoke(["quantize", "--model", folded, "--out", quantized, "--bits", 4, "--granularity", "tensor"])
    assert result.exit_code == 0, result.output
    sizes = yaml.safe_load(result.output)
    assert sizes["weight_bytes_after"] < sizes["weight_bytes_before"]


def test_merge_reports_params(trained, tmp_path):
    out = tmp_path / "merged.mimo"
    result = _invoke(["merge", "--model", trained, "--out", out, "--budget", "stem_conv=2", "--calib", 8, "--samples", 40])
    assert result.exit_code == 0, result.output
    assert serialization.load(str(out)).count_params() == 21158 - 2 * 10


def test_pipeline_command(tmp_path):
    config_file = tmp_path / "pipeline.yaml"
    config_file.write_text(
        "n_samples: 40\nstages: [train, fold-bn, quantize]\ntrain:\n  epochs: 1\nlatency_passes: 2\nlatency_warmup: 0\n"
    )
    out = tmp_path / "run"
    result = _invoke(["pipeline", "--config", config_file, "--out", out, "--seed", 5])
    assert result.exit_code == 0, result.output
    assert (out / "02_quantize.mimo").exists()
    assert (out / "summary.md").exists()


def test_usage_errors_exit_with_2(trained, tmp_path):
    assert _invoke(["eval", "--model", tmp_path / "missing.mimo", "--samples", 40]).exit_code == 2
    result = _invoke(["merge", "--model", trained, "--out", tmp_path / "m.mimo", "--budget", "lots", "--samples", 40])
    assert result.exit_code == 2
    bad_config = tmp_path / "bad.yaml"
    bad_config.write_text("stages: [merge]\n")
    assert _invoke(["pipeline", "--config", bad_config]).exit_code == 2
    assert _invoke(["quantize", "--model", trained, "--out", tmp_path / "q.mimo", "--bits", 3]).exit_code == 2


@pytest.mark.parametrize("option,value", [("--epochs", -1), ("--lr", -1)])
def test_invalid_train_settings_exit_with_2(tmp_path, option, value):
    result = _invoke(["train", "--out", tmp_path / "t.mimo", "--samples", 8, option, value])
    assert result.exit_code == 2
    assert "must be non-negative" in result.output
    assert not (tmp_path / "t.mimo").exists()


def test_invalid_operator_settings_exit_with_2(trained, tmp_path):
    assert _invoke(["prune", "--model", trained, "--out", tmp_path / "p.mimo", "--tau", 0]).exit_code == 2
    result = _invoke(["merge", "--model", trained, "--out", tmp_path / "m.mimo", "--calib", 0, "--samples", 40])
    assert result.exit_code == 2


def test_numerical_failure_exits_with_3(tmp_path):
    graph = build_preset("mini-mimo", seed=0)
    bias = graph.get("fc1.bias")
    broken = tmp_path / "nan.mimo"
    serialization.save(graph.with_parameters({"fc1.bias": Tensor(np.full(bias.shape, np.nan))}), str(broken))
    result = _invoke(["prune", "--model", broken, "--out", tmp_path / "p.mimo", "--epochs", 1, "--samples", 40])
    assert result.exit_code == 3
