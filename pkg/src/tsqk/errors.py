"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/input problems exit
with 2, runtime/training failures with 1.
"""


class ConfigError(ValueError):
    """Invalid configuration value or unknown config key."""


class UsageError(ValueError):
    """An operation was called with arguments violating its contract."""


class IngestionError(ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(RuntimeError):
    """Training cannot proceed (e.g. a single-class batch)."""


class DegenerateKernelError(RuntimeError):
    """All per-time quadratic forms vanished; kernel weights are undefined."""


class CapacityError(RuntimeError):
    """No feasible circuit placement exists on the requested device."""


class NormalizationUndefinedError(RuntimeError):
    """Result-fidelity normalization is undefined (ideal distribution uniform)."""
