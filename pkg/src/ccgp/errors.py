"""Exception hierarchy shared by all ccgp modules."""


class CCGPError(Exception):
    """Base class for every error raised by ccgp."""


class ArgumentError(CCGPError, ValueError):
    """Invalid argument: wrong shape, dimension or out-of-range value."""


class InvalidCellError(ArgumentError):
    """Degenerate cell geometry (repeated vertices, too few vertices)."""


class ConstructionError(CCGPError):
    """A cell references a face that does not exist."""


class ConsistencyError(CCGPError):
    """Boundary of a boundary is not zero."""


class OperatorError(CCGPError):
    """Operator is not self-adjoint in the requested inner product."""


class NumericError(CCGPError):
    """Factorisation or eigensolver failure."""


class DegenerateHyperparameterError(CCGPError):
    """Spectral filter hits zero at some eigenvalue."""


class IndefiniteKernelError(CCGPError):
    """Filter values are not all positive, so the kernel is not PSD."""


class OptimizationError(CCGPError):
    """Objective became non-finite during hyperparameter fitting."""

    def __init__(self, message, last_params=None, last_nll=None):
        super().__init__(message)
        self.last_params = last_params
        self.last_nll = last_nll


class RangeError(ArgumentError):
    """Requested eigen-index range contains an unusable mode."""
