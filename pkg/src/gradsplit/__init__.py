"""Gradient splitting, memorization difficulty and basin geometry on a small numpy autodiff core."""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractError, DataError, DataFormatError, DimensionError,
                     DivergenceError, GradsplitError, SingularityError, StateError)
from .tensor import Tensor, backward, no_grad

__all__ = [
    "__version__", "Tensor", "backward", "no_grad",
    "GradsplitError", "ConfigError", "ContractError", "DataError", "DataFormatError",
    "DimensionError", "DivergenceError", "SingularityError", "StateError",
]
