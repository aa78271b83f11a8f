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
Date: June 20th 2024
Description:
    Compression CLI: prune, fold-bn, merge and quantize
"""

from typing import Optional, Text

import click
import yaml

from mimoc.decorators import exit_on_error
from mimoc.enums import Granularity
from mimoc.factories.dataset_factory import DatasetFactory
from mimoc.factories.model_factory import ModelFactory
from mimoc.modules.compression import bnfold, mtz, quant, vib
from mimoc.modules.harness.training import TrainConfig
from mimoc.utils import config


@click.command("prune")
@click.option("--model", required=True, type=click.Path(dir_okay=False), help="Trained model.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Where to write the pruned model.")
@click.option("--gamma-reg", default=None, type=float, help="Regularizer weight when gates still have to be trained [default: 1e-3 / number of gate layers].")
@click.option("--tau", default=1e-2, show_default=True, help="Keep a channel iff mu^2 / sigma^2 > tau.")
@click.option("--epochs", default=20, show_default=True, help="Gate-training epochs.")
@click.option("--lr", default=0.05, show_default=True, help="Gate-training learning rate.")
@click.option("--seed", default=config.DEFAULT_SEED, show_default=True, help="Dataset and training seed.")
@click.option("--samples", default=1000, show_default=True, help="Synthetic dataset size (split 80/20).")
@exit_on_error
def prune_model(model: Text, out: Text, gamma_reg: Optional[float], tau: float, epochs: int, lr: float, seed: int, samples: int) -> None:
    """Remove the channels whose gates fall below tau.

    A model saved by `train --vib` keeps its trained gates and is only re-thresholded;
    a model without gates gets them trained first.
    """
    graph = ModelFactory.load(model)
    cfg = vib.VibConfig(gamma_reg=gamma_reg, tau=tau, epochs=epochs, lr=lr)
    if graph.gates():
        masks = vib.compute_masks(graph, cfg)
        gated, report = vib.apply_masks(graph, masks), vib.MaskReport.build(graph, masks)
    else:
        train_set, _ = DatasetFactory.create_split(seed, samples)
        result = vib.train_vib(graph, train_set, cfg, TrainConfig(epochs=epochs, lr=lr, seed=seed))
        gated, report = result.graph, result.report
    pruned = vib.prune_structural(gated)
    ModelFactory.save(pruned, out)
    click.echo(report.to_text())
    click.echo(yaml.dump({"model": out, "params_before": graph.count_params(), "params_after": pruned.count_params()}, sort_keys=False))


@click.command("fold-bn")
@click.option("--model", required=True, type=click.Path(dir_okay=False), help="Model to fold.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Where to write the folded model.")
@exit_on_error
def fold_model(model: Text, out: Text) -> None:
    """Fold every batch-norm into the convolution that feeds it."""
    graph = ModelFactory.load(model)
    folded = bnfold.fold_graph(graph)
    ModelFactory.save(folded, out)
    click.echo(yaml.dump({"model": out, "nodes_before": len(graph), "nodes_after": len(folded),
                          "params_before": graph.count_params(), "params_after": folded.count_params()}, sort_keys=False))


@click.command("merge")
@click.option("--model", required=True, type=click.Path(dir_okay=False), help="Two-branch model without gates.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Where to write the merged model.")
@click.option("--budget", default="0", show_default=True,
              help="'slot=count,...' with branch-relative slots (e.g. block1.conv1=4), or a fraction of every layer.")
@click.option("--calib", default=256, show_default=True, help="Calibration samples for the Hessians.")
@click.option("--damping", default=None, type=float, help="Hessian damping [default: 1e-3 * trace / F].")
@click.option("--fine-tune", "fine_tune", default=0, show_default=True, help="Joint fine-tuning epochs after merging.")
@click.option("--seed", default=config.DEFAULT_SEED, show_default=True, help="Dataset, sampling and fine-tuning seed.")
@click.option("--samples", default=1000, show_default=True, help="Synthetic dataset size (split 80/20).")
@exit_on_error
def merge_model(model: Text, out: Text, budget: Text, calib: int, damping: Optional[float], fine_tune: int, seed: int, samples: int) -> None:
    """Share functionally similar neurons between the two branches."""
    train_set, _ = DatasetFactory.create_split(seed, samples)
    graph = ModelFactory.load(model)
    cfg = mtz.MergeConfig(budget=budget, calib=calib, damping=damping, fine_tune_epochs=fine_tune, seed=seed)
    result = mtz.zip_branches(graph, train_set, cfg)
    ModelFactory.save(result.graph, out)
    click.echo(result.report.to_frame().to_string(index=False))
    click.echo(yaml.dump({"model": out, **result.report.to_dict()}, sort_keys=False))


@click.command("quantize")
@click.option("--model", required=True, type=click.Path(dir_okay=False), help="Model to quantize.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Where to write the quantized model.")
@click.option("--bits", type=click.Choice(["8", "4"]), default="8", show_default=True, help="Code width.")
@click.option("--granularity", type=click.Choice(["channel", "tensor"] + [g.value for g in Granularity]), default="channel",
              show_default=True, help="One range per output row, or one per tensor.")
@exit_on_error
def quantize_model(model: Text, out: Text, bits: Text, granularity: Text) -> None:
    """Replace conv and linear weights by affine integer codes."""
    graph = ModelFactory.load(model)
    quantized = quant.quantize_model(graph, int(bits), granularity)
    ModelFactory.save(quantized, out)
    click.echo(yaml.dump({"model": out, "weight_bytes_before": float(graph.weight_bytes()),
                          "weight_bytes_after": float(quantized.weight_bytes())}, sort_keys=False))
