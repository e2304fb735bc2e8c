"""Tailored finite point solvers and operator networks for elliptic interface problems."""

from .errors import (
    AmbiguousSideError,
    ConfigError,
    DomainError,
    NumericalError,
    SingularSystemError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguousSideError",
    "ConfigError",
    "DomainError",
    "NumericalError",
    "SingularSystemError",
    "TrainingError",
]
