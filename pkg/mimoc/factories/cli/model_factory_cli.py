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
    Model CLI: train, eval and bench
"""

from typing import Optional, Text

import click
import yaml

from mimoc.decorators import exit_on_error
from mimoc.enums import Preset
from mimoc.factories.dataset_factory import DatasetFactory
from mimoc.factories.model_factory import ModelFactory
from mimoc.modules.compression.vib import VibConfig, train_vib
from mimoc.modules.harness.metrics import bench, evaluate
from mimoc.modules.harness.training import TrainConfig, train
from mimoc.utils import config


@click.command("train")
@click.option("--preset", type=click.Choice([p.value for p in Preset]), default=Preset.MINI_MIMO.value, show_default=True,
              help="Graph preset to build.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Where to write the trained .mimo model.")
@click.option("--seed", default=config.DEFAULT_SEED, show_default=True, help="Seed of the model, the dataset and the optimizer.")
@click.option("--samples", default=1000, show_default=True, help="Synthetic dataset size (split 80/20).")
@click.option("--epochs", default=50, show_default=True, help="Training epochs.")
@click.option("--lr", default=0.05, show_default=True, help="SGD learning rate.")
@click.option("--input-name", default=None, help="Input kept by mini-siso (image or audio).")
@click.option("--head", default=None, help="Head kept by mini-miso and mini-siso (emotion or gender).")
@click.option("--vib", is_flag=True, default=False, help="Then train information-bottleneck gates; the saved model keeps them.")
@click.option("--gamma-reg", default=None, type=float, help="Gate regularizer weight [default: 1e-3 / number of gate layers].")
@click.option("--tau", default=1e-2, show_default=True, help="Mask threshold reported after --vib training.")
@click.option("--vib-epochs", default=20, show_default=True, help="Gate-training epochs.")
@exit_on_error
def train_model(preset: Text, out: Text, seed: int, samples: int, epochs: int, lr: float,
                input_name: Optional[Text] = None, head: Optional[Text] = None, vib: bool = False,
                gamma_reg: Optional[float] = None, tau: float = 1e-2, vib_epochs: int = 20) -> None:
    """Build a preset, train it on the synthetic dataset and save it.

    Args:
        preset (Text): preset name.
        out (Text): output model path.
        seed (int): seed of everything.
        samples (int): dataset size.
        epochs (int): training epochs.
        lr (float): learning rate.
        vib (bool): also train gates.

    Returns:
        None
    """
    train_set, test_set = DatasetFactory.create_split(seed, samples)
    graph = ModelFactory.create(preset, seed, input_name=input_name, head=head)
    result = train(graph, train_set, TrainConfig(epochs=epochs, lr=lr, seed=seed))
    trained = result.graph
    if vib:
        vib_cfg = VibConfig(gamma_reg=gamma_reg, tau=tau, epochs=vib_epochs)
        vib_result = train_vib(trained, train_set, vib_cfg, TrainConfig(epochs=vib_epochs, lr=vib_cfg.lr, seed=seed))
        trained = vib_result.graph
        click.echo(vib_result.report.to_text())
    ModelFactory.save(trained, out)
    row = evaluate(trained, test_set, preset, measure_latency=False)
    ret_val = {
        "model": out,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "accuracy": {head: round(acc, 2) for head, acc in row.accuracy.items()},
        "params": row.params,
    }
    click.echo(yaml.dump(ret_val, sort_keys=False))


@click.command("eval")
@click.option("--model", required=True, type=click.Path(dir_okay=False), help="Model to evaluate.")
@click.option("--seed", default=config.DEFAULT_SEED, show_default=True, help="Dataset seed.")
@click.option("--samples", default=1000, show_default=True, help="Synthetic dataset size; the 20% test split is used.")
@click.option("--passes", default=config.LATENCY_PASSES, show_default=True, help="Timed batch-1 forward passes.")
@click.option("--warmup", default=config.LATENCY_WARMUP, show_default=True, help="Untimed warm-up passes.")
@click.option("--threads", default=config.NUM_THREADS, show_default=True, help="Worker threads for the accuracy batches.")
@exit_on_error
def eval_model(model: Text, seed: int, samples: int, passes: int, warmup: int, threads: int) -> None:
    """Report accuracy per head, params, memory, FLOPs and latency of a saved model."""
    _, test_set = DatasetFactory.create_split(seed, samples)
    graph = ModelFactory.load(model)
    row = evaluate(graph, test_set, model, threads=threads, passes=passes, warmup=warmup)
    click.echo(yaml.dump(row.to_dict(), sort_keys=False))


@click.command("bench")
@click.option("--seed", default=config.DEFAULT_SEED, show_default=True, help="Seed of the dataset and every model.")
@click.option("--samples", default=1000, show_default=True, help="Synthetic dataset size.")
@click.option("--epochs", default=50, show_default=True, help="Training epochs per model.")
@click.option("--passes", default=config.LATENCY_PASSES, show_default=True, help="Timed batch-1 forward passes.")
@click.option("--warmup", default=config.LATENCY_WARMUP, show_default=True, help="Untimed warm-up passes.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Optional YAML file for the table.")
@exit_on_error
def bench_models(seed: int, samples: int, epochs: int, passes: int, warmup: int, out: Optional[Text] = None) -> None:
    """Compare SISO, MISO and MIMO baselines trained on the same data."""
    dataset = DatasetFactory.create(seed, samples)
    result = bench(dataset, seed, TrainConfig(epochs=epochs, seed=seed), passes=passes, warmup=warmup)
    click.echo(result.report.to_text())
    click.echo(yaml.dump({"speedup_vs_mimo": {k: round(v, 3) for k, v in result.speedup.items()}}, sort_keys=False))
    if out:
        from mimoc.utils.file_utils import save_yaml

        save_yaml(result.to_dict(), out)
