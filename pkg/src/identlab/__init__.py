"""Synthetic identifiability lab for contrastive representation learning."""

from .errors import (
    ConfigError,
    ConvergenceError,
    LabError,
    PreconditionError,
    ShapeError,
    TrainingError,
    UndefinedCorrelationError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "LabError",
    "PreconditionError",
    "ShapeError",
    "TrainingError",
    "UndefinedCorrelationError",
    "__version__",
]
