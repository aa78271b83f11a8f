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
Date: May 7th 2024
Description:
    Reverse-mode gradient tape
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Text, Tuple

import numpy as np

from mimoc.exceptions import UsageError
from mimoc.modules.tensor.tensor import Tensor

VectorJacobian = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


@dataclass
class TapeRecord:
    op: Text
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: VectorJacobian


class GradTape:
    """Records the fixed operator set while active and replays it backwards.

    Usage:
        with GradTape() as tape:
            tape.watch("w", w)
            loss = ops.mul(w, w)
        grads = tape.backward(loss)

    Attributes:
        records (List[TapeRecord]): operations in execution order.
        parameters (Dict[Text, Tensor]): registered trainable tensors.
        gradients (Dict[Text, Tensor]): filled by backward, one entry per registered parameter.
    """

    def __init__(self) -> None:
        self.records: List[TapeRecord] = []
        self.parameters: Dict[Text, Tensor] = {}
        self.gradients: Dict[Text, Tensor] = {}

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        stack = _stack()
        assert stack and stack[-1] is self, "GradTape: tapes must be closed in reverse opening order"
        stack.pop()

    def watch(self, name: Text, tensor: Tensor) -> Tensor:
        self.parameters[name] = tensor
        return tensor

    def watch_all(self, named: Dict[Text, Tensor]) -> None:
        for name, tensor in named.items():
            self.watch(name, tensor)

    def record(self, op: Text, inputs: Sequence[Tensor], output: Tensor, vjp: VectorJacobian) -> None:
        self.records.append(TapeRecord(op, tuple(inputs), output, vjp))

    def backward(self, loss: Tensor) -> Dict[Text, Tensor]:
        """Propagate d(loss)/d(.) to every registered parameter.

        Unused parameters receive a zero gradient so that every registered
        tensor ends up with a gradient of its own shape.

        Args:
            loss (Tensor): single-element tensor produced by recorded operations.

        Returns:
            Dict[Text, Tensor]: gradient per registered parameter name.
        """
        if loss.size != 1:
            raise UsageError(f"GradTape: backward needs a scalar loss, got shape {list(loss.shape)}")
        adjoints: Dict[int, np.ndarray] = {loss.uid: np.ones(loss.shape, dtype=np.float64)}
        for record in reversed(self.records):
            upstream = adjoints.pop(record.output.uid, None)
            if upstream is None:
                continue
            for tensor, grad in zip(record.inputs, record.vjp(upstream)):
                if grad is None:
                    continue
                if tensor.uid in adjoints:
                    adjoints[tensor.uid] = adjoints[tensor.uid] + grad
                else:
                    adjoints[tensor.uid] = grad
        self.gradients = {}
        for name, tensor in self.parameters.items():
            grad = adjoints.get(tensor.uid)
            if grad is None:
                logging.debug(f"GradTape: parameter '{name}' did not contribute to the loss")
                grad = np.zeros(tensor.shape)
            self.gradients[name] = Tensor(np.reshape(grad, tensor.shape), dtype=tensor.dtype)
        return self.gradients


def _stack() -> List[GradTape]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> Optional[GradTape]:
    """Innermost open tape of the calling thread, if any."""
    stack = _stack()
    return stack[-1] if stack else None


def record(op: Text, inputs: Sequence[Tensor], output: Tensor, vjp: VectorJacobian) -> Tensor:
    """Record `op` on the active tape (no-op without one) and return its output."""
    tape = active_tape()
    if tape is not None:
        tape.record(op, inputs, output, vjp)
    return output


def backward(tape: GradTape, loss: Tensor) -> Dict[Text, Tensor]:
    return tape.backward(loss)
