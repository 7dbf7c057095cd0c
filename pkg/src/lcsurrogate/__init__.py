"""Surrogate models for a three-cell twisted-nematic polarization device."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import DataError, LcSurrogateError, NumericalError  # noqa: E402,F401
