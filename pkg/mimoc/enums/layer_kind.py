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
Date: May 6th 2024
Description:
    Layer Kind Enum
"""

from enum import Enum


class LayerKind(str, Enum):
    """Kinds of node a ModelGraph can hold."""

    CONV = "conv"
    BN = "bn"
    RELU = "relu"
    LINEAR = "linear"
    RESIDUAL_BLOCK = "residual_block"
    CONCAT = "concat"
    GLOBAL_POOL = "global_pool"
    GATE = "gate"
    CHANNEL_RECOVER = "channel_recover"
    BIASED_CONV = "biased_conv"
    QUANTIZED_CONV = "quantized_conv"
    QUANTIZED_LINEAR = "quantized_linear"

    def __str__(self):
        return self._value_
