from .layers import (
    BiasedConvParams,
    Downsample,
    GateParams,
    KeptChannels,
    LayerNode,
    LinearParams,
    QuantizedConvParams,
    QuantizedLinearParams,
    QuantParams,
    QuantTensor,
    ResidualBlockParams,
    SharedNeuron,
)
from .graph import ModelGraph
