"""Reservoir-computing pipeline for credit-default classification."""

from __future__ import annotations

from .errors import (
    CompletenessError, ConfigurationError, DataError, FormatError, NumericalError, QrcError, ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "CompletenessError", "ConfigurationError", "DataError", "FormatError", "NumericalError", "QrcError",
    "ShapeError", "__version__",
]
