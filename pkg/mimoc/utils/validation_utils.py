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
"""
from typing import Iterable, List, Sequence, Text

from mimoc.enums import PipelineStage


def pipeline_stages_validation(stages: Sequence[Text]) -> None:
    """Pipeline Stages Validation

    Args:
        stages (Sequence[Text]): stage names of a pipeline config
    """
    order = [stage.value for stage in PipelineStage.ordered()]
    unknown = [stage for stage in stages if stage not in order]
    assert len(unknown) == 0, f"Pipeline Config Error: unknown stages {unknown}, expected a subsequence of {order}."

    positions = [order.index(stage) for stage in stages]
    assert positions == sorted(set(positions)), f"Pipeline Config Error: stages must follow the order {order} without repetition."
    assert (
        len(stages) == 0 or stages[0] == PipelineStage.TRAIN.value
    ), "Pipeline Config Error: the first stage must be `train`, every other stage needs a trained model."


def dataset_inputs_validation(graph_inputs: Iterable[Text], modalities: Iterable[Text], heads: Iterable[Text], labels: Iterable[Text]) -> None:
    """Dataset/Model Compatibility Validation

    Args:
        graph_inputs (Iterable[Text]): input names the model declares
        modalities (Iterable[Text]): modalities the dataset provides
        heads (Iterable[Text]): model heads
        labels (Iterable[Text]): label vectors the dataset provides
    """
    missing: List[Text] = [name for name in graph_inputs if name not in set(modalities)]
    assert len(missing) == 0, f"Evaluation Error: the dataset has no modality {missing}."
    unlabeled = [head for head in heads if head not in set(labels)]
    assert len(unlabeled) == 0, f"Evaluation Error: the dataset has no labels for heads {unlabeled}."
