"""Exception hierarchy shared by all subpackages."""


class NNCommError(Exception):
    """Base class for every error raised by nncomm."""


class DimensionError(NNCommError, ValueError):
    """Tensor shape does not match what a layer expects."""


class ConfigError(NNCommError, ValueError):
    """Invalid layer, model, or experiment configuration."""


class StateError(NNCommError, RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class DataError(NNCommError, ValueError):
    """Bad dataset contents or request."""


class ParseError(NNCommError, ValueError):
    """Malformed or corrupted binary file."""


class NumericError(NNCommError, ArithmeticError):
    """Non-finite loss or parameters during training."""
