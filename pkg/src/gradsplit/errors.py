"""Exception types shared across the package."""


class GradsplitError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GradsplitError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(GradsplitError, ValueError):
    """A caller violated an operation's precondition."""


class StateError(GradsplitError, RuntimeError):
    """An object is not in the state an operation needs (e.g. grads missing)."""


class ConfigError(GradsplitError, ValueError):
    """Invalid or inconsistent configuration."""


class DataFormatError(GradsplitError, ValueError):
    """A data file does not follow the expected binary layout."""


class DataError(GradsplitError, ValueError):
    """Data values are out of their valid range."""


class SingularityError(GradsplitError, ValueError):
    """A matrix is singular or too ill-conditioned to invert."""


class DivergenceError(GradsplitError, RuntimeError):
    """Training produced a non-finite loss.

    ``last_good_epoch`` is the last fully completed epoch (0 if the first
    epoch diverged) and ``record`` holds the rows recorded up to it.
    """

    def __init__(self, message, last_good_epoch=0, record=None):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.record = record
