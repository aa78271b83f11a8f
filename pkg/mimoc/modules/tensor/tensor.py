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
    Tensor Class
"""

import itertools
from typing import Any, Optional, Sequence, Tuple

import numpy as np

_uids = itertools.count()


class Tensor:
    """Dense, immutable N-dimensional float array in row-major order.

    4-D tensors use the NCHW layout (batch, channel, height, width). The
    backing array is read-only, so a Tensor can be shared between threads and
    between graphs without copying.

    Attributes:
        data (np.ndarray): read-only backing array.
        uid (int): process-unique identifier, used by GradTape to key gradients.
    """

    __slots__ = ("data", "uid")

    def __init__(self, data: Any, dtype: Optional[Any] = np.float32) -> None:
        """Create a Tensor.

        Args:
            data (Any): array-like values.
            dtype (optional): floating dtype of the stored values. Defaults to float32;
                float64 is used for finite-difference checks.
        """
        array = np.array(data, dtype=dtype, copy=True, order="C")
        array.setflags(write=False)
        self.data = array
        self.uid = next(_uids)

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """Adopt an array produced by an operator, keeping its dtype."""
        return cls(array, dtype=array.dtype)

    @classmethod
    def zeros(cls, shape: Sequence[int], dtype: Any = np.float32) -> "Tensor":
        return cls(np.zeros(tuple(shape)), dtype=dtype)

    @classmethod
    def ones(cls, shape: Sequence[int], dtype: Any = np.float32) -> "Tensor":
        return cls(np.ones(tuple(shape)), dtype=dtype)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype: Any) -> "Tensor":
        return Tensor(self.data, dtype=dtype)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def bit_equal(self, other: "Tensor") -> bool:
        """True when both tensors have the same shape, dtype and bytes."""
        return (
            self.shape == other.shape and self.dtype == other.dtype and self.data.tobytes() == other.data.tobytes()
        )

    def __len__(self) -> int:
        return self.shape[0] if self.shape else 1

    def __repr__(self) -> str:
        return f"<Tensor shape={list(self.shape)} dtype={self.dtype.name}>"
