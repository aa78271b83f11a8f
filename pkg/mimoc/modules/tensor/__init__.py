from .tensor import Tensor
from .params import BnParams, ConvParams, DEFAULT_BN_EPS
from .tape import GradTape, active_tape, backward
from .optim import SGD, sgd_step
from . import ops
