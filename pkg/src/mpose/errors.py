"""Exception types shared across the package.

Each carries a short ``category`` string that the CLI prints on stderr so
failures can be classified by scripts.
"""


class MposeError(Exception):
    category = "error"


class ShapeError(MposeError, ValueError):
    category = "shape"


class NumericError(MposeError, ArithmeticError):
    category = "numeric"

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"{message} (layer {layer})"
        super().__init__(message)
        self.layer = layer


class ConfigError(MposeError, ValueError):
    category = "config"


class InfeasibleError(MposeError, ValueError):
    category = "infeasible"


class FormatError(MposeError, ValueError):
    category = "format"


class DegenerateInputError(MposeError, ValueError):
    category = "degenerate"
