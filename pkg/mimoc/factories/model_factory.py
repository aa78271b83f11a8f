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
Date: May 9th 2024
Description:
    Model Factory Class
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Text, Union

from mimoc.enums import Preset
from mimoc.exceptions import UsageError
from mimoc.modules.model import serialization
from mimoc.modules.model.graph import ModelGraph, log_summary
from mimoc.modules.model.presets import build_preset
from mimoc.utils import config


class ModelFactory:
    """A static class for building, loading and describing ModelGraphs."""

    @classmethod
    def create(
        cls,
        preset: Union[Text, Preset] = Preset.MINI_MIMO,
        seed: int = config.DEFAULT_SEED,
        input_name: Optional[Text] = None,
        head: Optional[Text] = None,
    ) -> ModelGraph:
        """Build a preset graph.

        Args:
            preset (Union[Text, Preset], optional): preset name. Defaults to mini-mimo.
            seed (int, optional): initialisation seed. Defaults to MIMOC_SEED.
            input_name (Text, optional): input of the mini-siso preset.
            head (Text, optional): head of the mini-miso and mini-siso presets.

        Returns:
            ModelGraph: freshly initialised graph
        """
        graph = build_preset(preset, seed, input_name=input_name, head=head)
        log_summary(graph)
        return graph

    @classmethod
    def load(cls, path: Union[Text, Path]) -> ModelGraph:
        """Read a .mimo file."""
        if not Path(path).is_file():
            raise UsageError(f"Model Load: no model file at '{path}'")
        graph = serialization.load(path)
        logging.info(f"Model Load: {path} ({len(graph)} nodes, {graph.count_params()} params)")
        return graph

    @classmethod
    def save(cls, graph: ModelGraph, path: Union[Text, Path]) -> Path:
        return serialization.save(graph, path)

    @classmethod
    def describe(cls, graph: ModelGraph) -> Dict:
        """Size figures and structure of a graph as plain data."""
        return {
            "inputs": {name: list(shape) for name, shape in graph.inputs.items()},
            "outputs": list(graph.outputs),
            "nodes": len(graph),
            "params": graph.count_params(),
            "flops": graph.count_flops(batch=1),
            "weight_bytes": float(graph.weight_bytes()),
            "memory_bytes": float(graph.memory_bytes(batch=1)),
            "gates": len(graph.gates()),
            "shared_neurons": len(graph.shared),
            "metadata": dict(graph.metadata),
        }
