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
    Pipeline Factory Class
"""
from pathlib import Path
from typing import Dict, Optional, Text, Union

from mimoc.exceptions import ConfigurationError
from mimoc.modules.harness.dataset import SyntheticDataset
from mimoc.modules.harness.pipeline import PipelineConfig, PipelineResult, run_pipeline


class PipelineFactory:
    """A static class for creating and running compression pipelines."""

    @classmethod
    def create(cls, cfg: Optional[Union[Text, Path, Dict]] = None) -> PipelineConfig:
        """PipelineConfig from a YAML path, a plain dict, or defaults."""
        if cfg is None:
            return PipelineConfig()
        if isinstance(cfg, dict):
            try:
                return PipelineConfig.from_dict(cfg)
            except (TypeError, ValueError, KeyError) as e:
                raise ConfigurationError(f"Pipeline config: {e}")
        return PipelineConfig.from_yaml(str(cfg))

    @classmethod
    def run(cls, cfg: Union[PipelineConfig, Text, Path, Dict, None] = None, dataset: Optional[SyntheticDataset] = None) -> PipelineResult:
        if not isinstance(cfg, PipelineConfig):
            cfg = cls.create(cfg)
        return run_pipeline(cfg, dataset)
