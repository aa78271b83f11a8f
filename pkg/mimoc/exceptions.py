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

Description:
    Error hierarchy shared by the tensor core, the compression passes and the CLI
"""
from typing import Optional, Sequence, Text


class MimocError(Exception):
    """Base class of every error raised on purpose by mimoc.

    Attributes:
        exit_code (int): process exit code used by the CLI when this error escapes a command.
    """

    exit_code: int = 1


class ShapeError(MimocError, ValueError):
    """Two tensors (or a tensor and a parameter bundle) disagree on shape."""

    def __init__(
        self,
        message: Text,
        expected: Optional[Sequence[int]] = None,
        actual: Optional[Sequence[int]] = None,
        node: Optional[Text] = None,
    ) -> None:
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None
        self.node = node
        details = message
        if expected is not None or actual is not None:
            details = f"{details} (expected {self.expected}, got {self.actual})"
        if node is not None:
            details = f"Node '{node}': {details}"
        super().__init__(details)


class ConfigurationError(MimocError, ValueError):
    """A preset, a config file or an operator configuration is invalid."""

    exit_code = 2


class ConfigurationTypeError(ConfigurationError, TypeError):
    """An operator configuration field has the wrong type."""


class UsageError(MimocError, ValueError):
    """An API was called in a way its contract forbids."""

    exit_code = 2


class ModelParseError(MimocError, ValueError):
    """A `.mimo` file could not be decoded.

    Attributes:
        offset (int): byte offset at which decoding failed.
    """

    def __init__(self, message: Text, offset: int) -> None:
        self.offset = offset
        super().__init__(f"Load Model: {message} at byte offset {offset}")


class NumericalError(MimocError, ArithmeticError):
    """A computation produced NaN/Inf or a factorization failed."""

    exit_code = 3


class DataCorruptionError(MimocError, ValueError):
    """Stored data violates its declared range."""


class PruneError(MimocError, ValueError):
    """A mask would remove every channel of a layer that cannot lose all its outputs."""

    def __init__(self, layer: Text, message: Optional[Text] = None) -> None:
        self.layer = layer
        message = message or f"every channel of '{layer}' is pruned but its consumer needs at least one; lower tau"
        super().__init__(f"Prune: {message}")


class StageError(MimocError):
    """A pipeline stage failed.

    Attributes:
        stage (Text): name of the failing stage.
        last_good_model (Text, optional): path of the last model saved before the failure.
    """

    def __init__(self, stage: Text, cause: Exception, last_good_model: Optional[Text] = None) -> None:
        self.stage = stage
        self.cause = cause
        self.last_good_model = last_good_model
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"Pipeline stage '{stage}' failed: {cause}. Last good model: {last_good_model}")
