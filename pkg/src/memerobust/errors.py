"""Exception types shared across the toolkit."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class DegenerateBatchError(ValueError):
    """Batch statistics are undefined (fewer than 2 rows in train mode)."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class DataError(ValueError):
    """Invalid data content (labels, ids, dimensions)."""


class LoadError(DataError):
    """A dataset or checkpoint file failed validation."""


class UsageError(RuntimeError):
    """API called out of contract (e.g. backward on a consumed tape)."""


class UndefinedMetricError(ValueError):
    """Metric has no defined value for this input (e.g. empty WER reference)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""
