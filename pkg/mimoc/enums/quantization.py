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
Date: June 3rd 2024
Description:
    Quantization Enums
"""

from enum import Enum


class QuantBits(int, Enum):
    INT8 = 8
    INT4 = 4

    @property
    def levels(self) -> int:
        return (1 << self.value) - 1

    @property
    def offset(self) -> int:
        return 1 << (self.value - 1)

    @property
    def code_min(self) -> int:
        return -self.offset

    @property
    def code_max(self) -> int:
        return self.offset - 1


class Granularity(str, Enum):
    PER_TENSOR = "per_tensor"
    PER_CHANNEL = "per_channel"

    @classmethod
    def parse(cls, value) -> "Granularity":
        """Accepts the CLI short names 'tensor'/'channel' besides the enum values."""
        if isinstance(value, Granularity):
            return value
        aliases = {"tensor": cls.PER_TENSOR, "channel": cls.PER_CHANNEL}
        return aliases.get(str(value).lower()) or cls(str(value).lower())
