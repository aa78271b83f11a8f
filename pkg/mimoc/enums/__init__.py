from .gate_mode import GateMode
from .layer_kind import LayerKind
from .pipeline_stage import PipelineStage
from .preset import Preset
from .quantization import Granularity, QuantBits
