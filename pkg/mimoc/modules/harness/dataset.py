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
    Seeded synthetic two-modality dataset

    Generative rules (all draws from numpy.random.default_rng(seed)):
      * labels: emotion = 2 * orientation + pitch (4 classes), gender = band (2 classes);
        both label vectors are balanced permutations of 0..K-1 repeated.
      * image [1, 16, 16]: N(0, 0.3) noise plus a 2-pixel bar of amplitude 1 + 0.1 * gender,
        horizontal (orientation 0) or vertical (orientation 1) at a random offset in [2, 12].
      * audio [1, 16, 16] ("spectrogram", rows = frequency, columns = time): N(0, 0.3) noise
        plus energy 1 in rows 0-7 (band 0) or rows 8-15 (band 1); within the band,
        pitch 0 lights 4-column blocks ((t + shift) // 4 even) and pitch 1 alternating
        columns ((t + shift) even), shift uniform in [0, 3].
      * gender rule: mean(audio rows 8-15) - mean(audio rows 0-7) > 0  ->  gender 1.
      * emotion needs both inputs: the image only fixes orientation and the audio only fixes pitch.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Text, Tuple

import numpy as np

from mimoc.exceptions import UsageError
from mimoc.modules.tensor import Tensor

SIZE = 16
NOISE_STD = 0.3
BAR_WIDTH = 2
GENDER_CUE = 0.1
HEADS = {"emotion": 4, "gender": 2}


@dataclass
class SyntheticDataset:
    """Paired image/audio samples with an emotion (4-way) and a gender (2-way) label.

    Attributes:
        seed (int): generator seed.
        n_samples (int): number of samples.
        modalities (Dict[Text, np.ndarray]): 'image' and 'audio', each [N, 1, 16, 16] float32.
        labels (Dict[Text, np.ndarray]): 'emotion' and 'gender' int64 vectors.
    """

    seed: int
    n_samples: int
    modalities: Dict[Text, np.ndarray] = field(default_factory=dict)
    labels: Dict[Text, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.n_samples

    @property
    def image(self) -> np.ndarray:
        return self.modalities["image"]

    @property
    def audio(self) -> np.ndarray:
        return self.modalities["audio"]

    def inputs(self, indices: Optional[Sequence[int]] = None, names: Optional[Sequence[Text]] = None) -> Dict[Text, Tensor]:
        names = list(names) if names is not None else list(self.modalities)
        index = slice(None) if indices is None else np.asarray(indices, dtype=np.int64)
        return {name: Tensor(self.modalities[name][index]) for name in names}

    def targets(self, indices: Optional[Sequence[int]] = None) -> Dict[Text, np.ndarray]:
        index = slice(None) if indices is None else np.asarray(indices, dtype=np.int64)
        return {head: values[index] for head, values in self.labels.items()}

    def subset(self, indices: Sequence[int]) -> "SyntheticDataset":
        index = np.asarray(indices, dtype=np.int64)
        return SyntheticDataset(
            seed=self.seed,
            n_samples=int(index.size),
            modalities={name: values[index] for name, values in self.modalities.items()},
            labels={head: values[index] for head, values in self.labels.items()},
        )

    def split(self, train_fraction: float = 0.8, seed: Optional[int] = None) -> Tuple["SyntheticDataset", "SyntheticDataset"]:
        """Seeded shuffle, then the first `train_fraction` for training and the rest for testing."""
        if not 0.0 < train_fraction < 1.0:
            raise UsageError(f"Dataset split: train_fraction must lie in (0, 1), got {train_fraction}")
        order = np.random.default_rng(self.seed if seed is None else seed).permutation(self.n_samples)
        cut = int(round(train_fraction * self.n_samples))
        return self.subset(order[:cut]), self.subset(order[cut:])

    def class_balance(self) -> Dict[Text, np.ndarray]:
        """Per head, the fraction of samples in each class."""
        return {head: np.bincount(values, minlength=HEADS[head]) / self.n_samples for head, values in self.labels.items()}


def _balanced(rng: np.random.Generator, n: int, classes: int) -> np.ndarray:
    return rng.permutation(np.arange(n) % classes).astype(np.int64)


def gen_dataset(seed: int, n: int) -> SyntheticDataset:
    """Generate `n` samples; identical seeds give bit-identical datasets."""
    if n < 8:
        raise UsageError(f"Dataset: need at least 8 samples, got {n}")
    rng = np.random.default_rng(seed)
    emotion = _balanced(rng, n, HEADS["emotion"])
    gender = _balanced(rng, n, HEADS["gender"])
    orientation, pitch = emotion // 2, emotion % 2

    image = rng.normal(0.0, NOISE_STD, size=(n, 1, SIZE, SIZE))
    offsets = rng.integers(2, SIZE - BAR_WIDTH - 2, size=n, endpoint=True)
    amplitude = 1.0 + GENDER_CUE * gender
    for i in range(n):
        bar = slice(offsets[i], offsets[i] + BAR_WIDTH)
        if orientation[i] == 0:
            image[i, 0, bar, :] += amplitude[i]
        else:
            image[i, 0, :, bar] += amplitude[i]

    audio = rng.normal(0.0, NOISE_STD, size=(n, 1, SIZE, SIZE))
    shifts = rng.integers(0, 3, size=n, endpoint=True)
    time = np.arange(SIZE)
    half = SIZE // 2
    for i in range(n):
        if pitch[i] == 0:
            active = ((time + shifts[i]) // 4) % 2 == 0
        else:
            active = (time + shifts[i]) % 2 == 0
        rows = slice(half, SIZE) if gender[i] == 1 else slice(0, half)
        audio[i, 0, rows, :] += active.astype(np.float64)[None, :]

    return SyntheticDataset(
        seed=seed,
        n_samples=n,
        modalities={"image": image.astype(np.float32), "audio": audio.astype(np.float32)},
        labels={"emotion": emotion, "gender": gender},
    )


def gender_rule(audio: np.ndarray) -> np.ndarray:
    """Depth-1 decision rule predicting gender from the audio modality alone."""
    half = audio.shape[2] // 2
    energy = audio[:, 0, half:, :].mean(axis=(1, 2)) - audio[:, 0, :half, :].mean(axis=(1, 2))
    return (energy > 0).astype(np.int64)
