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
    Model Preset Enum
"""

from enum import Enum


class Preset(str, Enum):
    """
    Enumeration of the graphs ModelFactory can build.

    Attributes:
        MINI_MIMO (str): two inputs, two heads.
        MINI_MISO (str): two inputs, one head (task1).
        MINI_SISO (str): image input only, one head (task1).
        PAPER_MIMO (str): two ResNet-18 branches, used for parameter accounting.
    """

    MINI_MIMO = "mini-mimo"
    MINI_MISO = "mini-miso"
    MINI_SISO = "mini-siso"
    PAPER_MIMO = "paper-mimo"

    def __str__(self):
        return self._value_
