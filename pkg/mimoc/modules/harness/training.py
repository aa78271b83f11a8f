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
Date: June 11th 2024
Description:
    Mini-batch SGD training of ModelGraphs
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Text

import numpy as np
from dataclasses_json import dataclass_json
from tqdm import tqdm

from mimoc.enums import GateMode
from mimoc.exceptions import ConfigurationError, ConfigurationTypeError, NumericalError, UsageError
from mimoc.modules.compression.gates import vib_regularizer
from mimoc.modules.harness.dataset import SyntheticDataset
from mimoc.modules.model.graph import ModelGraph
from mimoc.modules.tensor import SGD, GradTape, Tensor, ops
from mimoc.utils import config
from mimoc.utils.validation_utils import dataset_inputs_validation


@dataclass_json
@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = config.DEFAULT_SEED
    train_fraction: float = 0.8

    def __post_init__(self):
        if not isinstance(self.epochs, int):
            raise ConfigurationTypeError("epochs should be of type int")

        if not isinstance(self.batch_size, int):
            raise ConfigurationTypeError("batch_size should be of type int")

        if not isinstance(self.seed, int):
            raise ConfigurationTypeError("seed should be of type int")

        if not isinstance(self.lr, (int, float)) or not isinstance(self.momentum, (int, float)):
            raise ConfigurationTypeError("lr and momentum should be numbers")

        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")

        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")

        if self.lr < 0:
            raise ConfigurationError("lr must be non-negative")

        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")

        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must lie in (0, 1)")


@dataclass
class TrainResult:
    """Trained graph plus the mean loss of every epoch."""

    graph: ModelGraph
    losses: List[float] = field(default_factory=list)
    initial_loss: Optional[float] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def task_loss(outputs: Dict[Text, Tensor], targets: Dict[Text, np.ndarray]) -> Tensor:
    """Sum over heads of the mean softmax cross-entropy."""
    loss = None
    for head, logits in outputs.items():
        term = ops.softmax_cross_entropy(logits, targets[head])
        loss = term if loss is None else ops.add(loss, term)
    return loss


def objective(graph: ModelGraph, outputs: Dict[Text, Tensor], targets: Dict[Text, np.ndarray], gamma_reg: float = 0.0) -> Tensor:
    """Task loss plus gamma_reg times the information-bottleneck regularizer of every gate."""
    loss = task_loss(outputs, targets)
    gates = list(graph.gates().values())
    if gamma_reg and gates:
        loss = ops.add(loss, ops.scale(vib_regularizer(gates), gamma_reg))
    return loss


def tie_shared_gradients(graph: ModelGraph, grads: Dict[Text, Tensor]) -> Dict[Text, Tensor]:
    """Give both rows of every shared neuron the sum of their gradients.

    The batch-norm channel right after a shared row is tied the same way so that
    folding keeps the rows equal.
    """
    if not graph.shared:
        return grads
    arrays = {name: grad.data.astype(np.float64).copy() for name, grad in grads.items()}
    for item in graph.shared:
        pairs = [(f"{item.slot_a}.{name}", f"{item.slot_b}.{name}") for name in ("weight", "bias")]
        bn_a, bn_b = graph.slot_bn_path(item.slot_a), graph.slot_bn_path(item.slot_b)
        if bn_a is not None and bn_b is not None:
            pairs += [(f"{bn_a}.{name}", f"{bn_b}.{name}") for name in ("gamma", "beta")]
        for path_a, path_b in pairs:
            if path_a not in arrays or path_b not in arrays:
                continue
            total = arrays[path_a][item.row_a] + arrays[path_b][item.row_b]
            arrays[path_a][item.row_a] = total
            arrays[path_b][item.row_b] = total
    return {name: Tensor(values, dtype=grads[name].dtype) for name, values in arrays.items()}


def train(
    graph: ModelGraph,
    dataset: SyntheticDataset,
    cfg: Optional[TrainConfig] = None,
    gamma_reg: float = 0.0,
    desc: Text = "Train",
) -> TrainResult:
    """Optimize the summed per-head cross-entropy (plus gamma_reg * R when gates exist).

    Gates run in train mode (sampled noise); everything else uses the stored
    batch-norm statistics. Results are deterministic for a fixed seed.

    Args:
        graph (ModelGraph): model to train; it is not modified.
        dataset (SyntheticDataset): training samples.
        cfg (TrainConfig, optional): optimizer settings. Defaults to TrainConfig().
        gamma_reg (float, optional): weight of the gate regularizer. Defaults to 0.
        desc (Text, optional): progress-bar label.

    Raises:
        NumericalError: the loss became NaN or infinite.

    Returns:
        TrainResult: trained graph and the per-epoch mean losses.
    """
    cfg = cfg or TrainConfig()
    try:
        dataset_inputs_validation(graph.inputs, dataset.modalities, graph.outputs, dataset.labels)
    except AssertionError as e:
        raise UsageError(f"{desc}: {e}")
    optimizer = SGD(cfg.lr, cfg.momentum)
    mode = GateMode.TRAIN if graph.gates() else GateMode.EVAL
    names = [name for name in graph.inputs]
    result = TrainResult(graph=graph)
    step = 0
    for epoch in tqdm(range(cfg.epochs), desc=f" {desc}", leave=False, disable=config.DISABLE_PROGRESS):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(dataset), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            params = graph.named_parameters()
            with GradTape() as tape:
                tape.watch_all(params)
                outputs = graph.forward(dataset.inputs(batch, names), mode=mode, noise_seed=cfg.seed * 100_003 + step)
                loss = objective(graph, outputs, dataset.targets(batch), gamma_reg)
            value = loss.item()
            if not np.isfinite(value):
                last = result.losses[-1] if result.losses else None
                raise NumericalError(
                    f"{desc}: loss became {value} at epoch {epoch}, step {step}; last finite epoch loss {last}"
                )
            if result.initial_loss is None:
                result.initial_loss = value
            grads = tie_shared_gradients(graph, tape.backward(loss))
            graph = graph.with_parameters(optimizer.step(params, grads))
            epoch_losses.append(value)
            step += 1
        result.losses.append(float(np.mean(epoch_losses)))
        logging.debug(f"{desc}: epoch {epoch + 1}/{cfg.epochs} loss {result.losses[-1]:.5f}")
    result.graph = graph
    if result.losses:
        logging.info(f"{desc}: {cfg.epochs} epochs, loss {result.initial_loss:.4f} -> {result.final_loss:.4f}")
    return result
