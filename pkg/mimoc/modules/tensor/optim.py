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
Date: May 8th 2024
Description:
    SGD with momentum
"""

from typing import Dict, Optional, Text

import numpy as np

from mimoc.exceptions import ConfigurationError, ShapeError
from mimoc.modules.tensor.tensor import Tensor


def sgd_step(
    params: Dict[Text, Tensor],
    grads: Dict[Text, Tensor],
    lr: float,
    momentum: float = 0.0,
    velocity: Optional[Dict[Text, np.ndarray]] = None,
) -> Dict[Text, Tensor]:
    """One heavy-ball update: v <- momentum * v + grad; p <- p - lr * v.

    Args:
        params (Dict[Text, Tensor]): current parameters.
        grads (Dict[Text, Tensor]): gradients keyed like params; missing keys are left untouched.
        lr (float): learning rate. Zero leaves every parameter bit-identical.
        momentum (float, optional): in [0, 1). Defaults to 0.
        velocity (Dict[Text, np.ndarray], optional): momentum buffers, updated in place.

    Returns:
        Dict[Text, Tensor]: new parameter tensors (inputs are never modified).
    """
    if lr < 0:
        raise ConfigurationError(f"SGD: learning rate must be non-negative, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigurationError(f"SGD: momentum must lie in [0, 1), got {momentum}")
    velocity = {} if velocity is None else velocity
    updated = dict(params)
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"SGD: gradient of '{name}' does not match its parameter", param.shape, grad.shape)
        v = momentum * velocity.get(name, 0.0) + grad.data.astype(np.float64)
        velocity[name] = v
        if lr == 0:
            continue
        updated[name] = Tensor(param.data.astype(np.float64) - lr * v, dtype=param.dtype)
    return updated


class SGD:
    """Stateful wrapper around sgd_step that keeps the momentum buffers."""

    def __init__(self, lr: float, momentum: float = 0.9) -> None:
        if lr < 0 or not 0.0 <= momentum < 1.0:
            raise ConfigurationError(f"SGD: invalid lr={lr} / momentum={momentum}")
        self.lr = lr
        self.momentum = momentum
        self.velocity: Dict[Text, np.ndarray] = {}

    def step(self, params: Dict[Text, Tensor], grads: Dict[Text, Tensor]) -> Dict[Text, Tensor]:
        return sgd_step(params, grads, self.lr, self.momentum, self.velocity)
