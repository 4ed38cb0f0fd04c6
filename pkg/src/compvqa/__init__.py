"""Compositional few-shot visual question answering on a numpy autodiff core."""

from .errors import CompVQAError, ConfigError, DataError, NumericalError, ShapeError, UsageError

__version__ = "0.1.0"

__all__ = ["CompVQAError", "ConfigError", "DataError", "NumericalError", "ShapeError", "UsageError",
           "__version__"]
