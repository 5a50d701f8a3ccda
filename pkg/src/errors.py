"""
Exception Types

Typed errors raised by the library modules. The CLI maps them to exit
codes through the ErrorHandler in logger.py.
"""


class MimeError(Exception):
    """Base class for all errors raised by the toolkit."""

    exit_code = 1


class ConfigError(MimeError):
    """Invalid or incomplete configuration, unknown fixture, bad flag."""

    exit_code = 2


class MissingSparsityError(ConfigError):
    """A schedule names a task that has no sparsity profile."""

    def __init__(self, task_id: str, layer: str = None):
        self.task_id = task_id
        self.layer = layer
        where = f" for layer {layer}" if layer else ""
        super().__init__(f"no sparsity profile for task '{task_id}'{where}")


class ShapeError(MimeError, ValueError):
    """Tensor or geometry mismatch."""

    exit_code = 2


class NumericError(MimeError, ArithmeticError):
    """NaN/inf in a forward pass or a diverging loss."""

    exit_code = 3

    def __init__(self, message: str, layer: int = None):
        self.layer = layer
        super().__init__(message)


class ThresholdError(MimeError, ValueError):
    """Non-positive threshold or a threshold set that does not fit the network."""

    exit_code = 2


class DatasetError(MimeError, ValueError):
    """Empty dataset, bad labels, or an unreadable IDX file."""

    exit_code = 2
