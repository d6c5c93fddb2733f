"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


class ShapeError(ValueError):
    """Tensor shapes do not conform for the requested operation."""


class NonFiniteError(ValueError):
    """NaN or infinity where finite numbers are required."""


class TraceFormatError(ValueError):
    """A trace or KPI file could not be parsed or failed validation."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimisation."""
