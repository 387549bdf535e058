"""Exception types shared across the lab."""


class LabError(Exception):
    """Base class for every error raised by identlab."""


class ShapeError(LabError, ValueError):
    """Operand dimensions do not conform."""


class ConvergenceError(LabError, RuntimeError):
    """An iterative routine exhausted its iteration budget."""


class PreconditionError(LabError, ValueError):
    """An argument violates a documented precondition."""


class UndefinedCorrelationError(LabError, ValueError):
    """Correlation requested for a constant (zero-variance) series."""


class ConfigError(LabError, ValueError):
    """An experiment configuration failed validation."""


class TrainingError(LabError, RuntimeError):
    """Training diverged (non-finite loss)."""
