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
Date: June 12th 2024
Description:
    Pipeline Stage Enum
"""

from enum import Enum


class PipelineStage(str, Enum):
    """Stages run_pipeline knows about, in execution order."""

    TRAIN = "train"
    VIB_PRUNE = "vib-prune"
    FINE_TUNE = "fine-tune"
    MERGE = "merge"
    FOLD_BN = "fold-bn"
    QUANTIZE = "quantize"
    EVALUATE = "evaluate"

    @classmethod
    def ordered(cls):
        return [cls.TRAIN, cls.VIB_PRUNE, cls.FINE_TUNE, cls.MERGE, cls.FOLD_BN, cls.QUANTIZE, cls.EVALUATE]

    def __str__(self):
        return self._value_
