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
Date: June 10th 2024
Description:
    Dataset Factory Class
"""
from typing import Optional, Tuple

from mimoc.modules.harness.dataset import SyntheticDataset, gen_dataset
from mimoc.utils import config


class DatasetFactory:
    """A static class for creating synthetic image/audio datasets."""

    @classmethod
    def create(cls, seed: int = config.DEFAULT_SEED, n_samples: int = 1000) -> SyntheticDataset:
        """Generate a seeded dataset; equal arguments give bit-identical datasets."""
        return gen_dataset(seed, n_samples)

    @classmethod
    def create_split(
        cls, seed: int = config.DEFAULT_SEED, n_samples: int = 1000, train_fraction: float = 0.8, split_seed: Optional[int] = None
    ) -> Tuple[SyntheticDataset, SyntheticDataset]:
        """Train and test halves of a generated dataset (seeded shuffle, 80/20 by default)."""
        return gen_dataset(seed, n_samples).split(train_fraction, seed if split_seed is None else split_seed)
