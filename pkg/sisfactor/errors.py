# sisfactor/errors.py
from typing import Any, Dict, Optional

from .utils import err


class SisError(Exception):
    """Base error carrying a stable machine-readable code."""

    code = "SIS_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def envelope(self) -> Dict[str, Any]:
        return err(self.code, self.message, self.details)


class ArgumentError(SisError, ValueError):
    code = "INVALID_ARGUMENT"


class DimensionError(SisError, ValueError):
    code = "DIMENSION_MISMATCH"


class DataValidationError(SisError, ValueError):
    code = "VALIDATION_ERROR"


class ConfigError(SisError):
    code = "CONFIG_ERROR"


class EmptyChainError(SisError):
    code = "EMPTY_CHAIN"


class NumericalError(SisError):
    code = "NUMERICAL_ERROR"


class NonFiniteStateError(SisError):
    code = "NON_FINITE_STATE"

    def __init__(self, iteration: int, block: str) -> None:
        super().__init__(
            f"non-finite values in block '{block}' at iteration {iteration}",
            {"iteration": iteration, "block": block},
        )
        self.iteration = iteration
        self.block = block
