"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, divergence 4).
"""


class ConfigError(ValueError):
    """Invalid configuration: bad geometry, hyperparameters, or config file."""

    exit_code = 2


class DataError(ValueError):
    """Unreadable or malformed dataset input (manifest rows, image files)."""

    exit_code = 3


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"non-finite loss at step {self.step}")
