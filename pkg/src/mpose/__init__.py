"""MPO compression of feedforward and LSTM mask estimators for speech enhancement."""
from .errors import (ConfigError, DegenerateInputError, FormatError, InfeasibleError, MposeError,
                     NumericError, ShapeError)
from .mpo import MpoMatrix, MpoPlan, contract, decompose, reconstruct
from .nn import LayerSpec, Model, ModelSpec

__version__ = "0.1.0"
