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
Date: June 17th 2024
Description:
    Staged compression pipeline: train -> vib-prune -> fine-tune -> merge -> fold-bn -> quantize -> evaluate
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Text, Tuple

import yaml
from dataclasses_json import dataclass_json

from mimoc.enums import PipelineStage
from mimoc.exceptions import ConfigurationError, ConfigurationTypeError, MimocError, StageError
from mimoc.modules.compression import bnfold, mtz, quant, vib
from mimoc.modules.compression.mtz import MergeConfig
from mimoc.modules.compression.quant import QuantConfig
from mimoc.modules.compression.vib import VibConfig
from mimoc.modules.harness.dataset import SyntheticDataset, gen_dataset
from mimoc.modules.harness.metrics import MetricsReport, evaluate
from mimoc.modules.harness.training import TrainConfig, train
from mimoc.modules.model import serialization
from mimoc.modules.model.graph import ModelGraph
from mimoc.modules.model.presets import build_preset
from mimoc.utils import config
from mimoc.utils.file_utils import output_path, save_text, save_yaml
from mimoc.utils.validation_utils import pipeline_stages_validation

ABLATIONS = ("w/o VIB", "w/o MTZ", "w/o PTQ", "w/ RandPruning")


@dataclass_json
@dataclass
class PipelineConfig:
    """Everything a pipeline run needs; every field has a default.

    Attributes:
        preset (Text): graph preset to build.
        seed (int): seed of the preset, the dataset and every stage.
        n_samples (int): synthetic dataset size, split 80/20.
        stages (List[Text]): stages to run, a subsequence of the canonical order.
        train (TrainConfig): base training.
        vib (VibConfig): gate training and threshold.
        fine_tune_epochs (int): fine-tune stage epochs.
        fine_tune_lr_scale (float): fine-tune learning rate relative to train.lr.
        merge (MergeConfig): merge budgets and calibration size.
        quant (QuantConfig): bit width and granularity.
        output_dir (Text): where stage models and reports are written.
        latency_passes (int, optional): timed passes per evaluation (None: MIMOC_LATENCY_PASSES).
        latency_warmup (int, optional): warm-up passes per evaluation.
        ablation (bool): also produce the w/o VIB, w/o MTZ, w/o PTQ and w/ RandPruning rows.
    """

    preset: Text = "mini-mimo"
    seed: int = config.DEFAULT_SEED
    n_samples: int = 1000
    stages: List[Text] = field(default_factory=lambda: [stage.value for stage in PipelineStage.ordered()])
    train: TrainConfig = field(default_factory=TrainConfig)
    vib: VibConfig = field(default_factory=VibConfig)
    fine_tune_epochs: int = 10
    fine_tune_lr_scale: float = 0.1
    merge: MergeConfig = field(default_factory=lambda: MergeConfig(budget="0.25"))
    quant: QuantConfig = field(default_factory=QuantConfig)
    output_dir: Text = config.OUTPUT_DIR
    latency_passes: Optional[int] = None
    latency_warmup: Optional[int] = None
    ablation: bool = False

    def __post_init__(self):
        if not isinstance(self.seed, int) or not isinstance(self.n_samples, int):
            raise ConfigurationTypeError("seed and n_samples should be of type int")

        if self.n_samples < 8:
            raise ConfigurationError("n_samples must be at least 8")

        if self.fine_tune_lr_scale < 0:
            raise ConfigurationError("fine_tune_lr_scale must be non-negative")

        try:
            pipeline_stages_validation(self.stages)
        except AssertionError as e:
            raise ConfigurationError(str(e))

    @classmethod
    def from_yaml(cls, path: Text) -> "PipelineConfig":
        """Parse a YAML config file; every error becomes a ConfigurationError."""
        try:
            with open(path) as f:
                data = yaml.safe_load(f) or {}
            return cls.from_dict(data)
        except (OSError, yaml.YAMLError, TypeError, ValueError, KeyError) as e:
            raise ConfigurationError(f"Pipeline config '{path}': {e}")


@dataclass
class PipelineResult:
    report: MetricsReport
    models: Dict[Text, Text] = field(default_factory=dict)
    mask_report: Optional[vib.MaskReport] = None
    merge_report: Optional[mtz.MergeReport] = None
    ablation: MetricsReport = field(default_factory=MetricsReport)

    def to_dict(self) -> Dict:
        return {
            "stages": self.report.to_dict(),
            "models": dict(self.models),
            "masks": self.mask_report.to_dict() if self.mask_report else None,
            "merge": self.merge_report.to_dict() if self.merge_report else None,
            "ablation": self.ablation.to_dict(),
        }


class _Run:
    """State threaded through the stages of one pipeline run."""

    def __init__(self, cfg: PipelineConfig, dataset: SyntheticDataset) -> None:
        self.cfg = cfg
        self.train_set, self.test_set = dataset.split(cfg.train.train_fraction, cfg.seed)
        self.baseline_params: Optional[int] = None
        self.masks = None

    def evaluate(self, graph: ModelGraph, method: Text):
        return evaluate(
            graph,
            self.test_set,
            method,
            passes=self.cfg.latency_passes,
            warmup=self.cfg.latency_warmup,
            baseline_params=self.baseline_params,
        )

    def stage(self, stage: PipelineStage, graph: Optional[ModelGraph], random_masks: bool = False) -> Tuple[ModelGraph, Dict]:
        """Run one stage and return the new graph plus stage-specific details."""
        cfg = self.cfg
        if stage == PipelineStage.TRAIN:
            graph = build_preset(cfg.preset, cfg.seed)
            return train(graph, self.train_set, cfg.train, desc="Train").graph, {}
        if stage == PipelineStage.VIB_PRUNE:
            if random_masks:
                if self.masks is None:
                    raise ConfigurationError("Pipeline: random pruning needs the masks of a vib-prune run")
                gated = vib.insert_gates(graph, VibConfig(mu_init=1.0))
                masks = vib.random_masks(self.masks, cfg.seed)
                return vib.prune_structural(vib.apply_masks(gated, masks)), {}
            result = vib.train_vib(graph, self.train_set, cfg.vib, TrainConfig(epochs=cfg.vib.epochs, lr=cfg.vib.lr, seed=cfg.seed))
            self.masks = result.masks
            return vib.prune_structural(result.graph), {"masks": result.report}
        if stage == PipelineStage.FINE_TUNE:
            tune_cfg = TrainConfig(epochs=cfg.fine_tune_epochs, lr=cfg.train.lr * cfg.fine_tune_lr_scale, momentum=cfg.train.momentum, seed=cfg.seed)
            return train(graph, self.train_set, tune_cfg, desc="Fine-tune").graph, {}
        if stage == PipelineStage.MERGE:
            result = mtz.zip_branches(graph, self.train_set, cfg.merge)
            return result.graph, {"merge": result.report}
        if stage == PipelineStage.FOLD_BN:
            return bnfold.fold_graph(graph), {}
        if stage == PipelineStage.QUANTIZE:
            return quant.quantize_model(graph, cfg.quant.bits, cfg.quant.granularity), {}
        return graph, {}


def _stage_path(output_dir: Text, index: int, stage: PipelineStage) -> Text:
    return str(output_path(f"{index:02d}_{stage.value}.mimo", output_dir))


def run_pipeline(cfg: PipelineConfig, dataset: Optional[SyntheticDataset] = None) -> PipelineResult:
    """Run the configured stages in order, saving the model of every stage.

    Each stage adds one report row measured on the held-out split. A failing
    stage stops the run with a StageError naming the stage and the last model
    that was saved.
    """
    dataset = dataset or gen_dataset(cfg.seed, cfg.n_samples)
    run = _Run(cfg, dataset)
    result = PipelineResult(MetricsReport())
    graph: Optional[ModelGraph] = None
    last_good: Optional[Text] = None
    trained: Optional[ModelGraph] = None
    stages = [PipelineStage(stage) for stage in cfg.stages]

    for index, stage in enumerate(stages):
        logging.info(f"Pipeline: stage {index + 1}/{len(stages)} '{stage.value}'")
        try:
            graph, details = run.stage(stage, graph)
        except MimocError as e:
            raise StageError(stage.value, e, last_good)
        except (ArithmeticError, ValueError) as e:
            raise StageError(stage.value, e, last_good)
        graph = graph.rebuild(metadata={**graph.metadata, "stage": stage.value})
        if stage == PipelineStage.TRAIN:
            run.baseline_params = graph.count_params()
            trained = graph
        result.mask_report = details.get("masks", result.mask_report)
        result.merge_report = details.get("merge", result.merge_report)

        path = _stage_path(cfg.output_dir, index, stage)
        serialization.save(graph, path)
        result.models[stage.value] = last_good = path
        result.report.add(run.evaluate(graph, stage.value))

    if cfg.ablation and trained is not None:
        result.ablation = _ablation(run, trained, stages, result)
    write_reports(result, cfg)
    return result


def _ablation(run: "_Run", trained: ModelGraph, stages: List[PipelineStage], result: PipelineResult) -> MetricsReport:
    """Final rows of the pipeline with one ingredient removed or replaced."""
    report = MetricsReport()
    if result.report.rows:
        full = result.report.rows[-1]
        report.add(type(full)(**{**full.__dict__, "method": "full"}))
    compression = [s for s in stages if s not in (PipelineStage.TRAIN, PipelineStage.EVALUATE)]
    variants = {
        "w/o VIB": [s for s in compression if s not in (PipelineStage.VIB_PRUNE, PipelineStage.FINE_TUNE)],
        "w/o MTZ": [s for s in compression if s != PipelineStage.MERGE],
        "w/o PTQ": [s for s in compression if s != PipelineStage.QUANTIZE],
        "w/ RandPruning": compression,
    }
    # variants share stage prefixes; each prefix is computed once
    cache: Dict[Tuple, ModelGraph] = {}
    for name in ABLATIONS:
        randomized = name == "w/ RandPruning"
        if randomized and (run.masks is None or PipelineStage.VIB_PRUNE not in variants[name]):
            logging.info("Pipeline: no vib-prune stage, skipping the random pruning row")
            continue
        graph = trained
        for depth, stage in enumerate(variants[name], start=1):
            key = (randomized, tuple(variants[name][:depth]))
            if key not in cache:
                try:
                    cache[key], _ = run.stage(stage, graph, random_masks=randomized)
                except MimocError as e:
                    raise StageError(f"{name}: {stage.value}", e)
            graph = cache[key]
        report.add(run.evaluate(graph, name))
    return report


def write_reports(result: PipelineResult, cfg: PipelineConfig) -> None:
    """report.txt (aligned tables), report.yaml (machine-readable) and summary.md."""
    from mimoc.modules.harness.report import render_summary

    text = [result.report.to_text()]
    if result.mask_report is not None:
        text += ["", result.mask_report.to_text()]
    if result.merge_report is not None:
        text += ["", result.merge_report.to_frame().to_string(index=False)]
    if result.ablation.rows:
        text += ["", result.ablation.to_text()]
    save_text("\n".join(text), output_path("report.txt", cfg.output_dir))
    save_yaml(result.to_dict(), output_path("report.yaml", cfg.output_dir))
    save_text(render_summary(result, cfg), output_path("summary.md", cfg.output_dir))
