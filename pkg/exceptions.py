"""
Exception hierarchy for the whitebed workbench.

Library modules raise these; entry points (cli.py, run_*.py) catch
WhitebedError, log it and exit with a one-line diagnostic.
"""

from typing import Optional


class WhitebedError(Exception):
    """Base class for every error raised by this package"""


class ConfigError(WhitebedError):
    """Invalid configuration key or value"""


class ShapeError(WhitebedError):
    """Operand shapes are incompatible for an operation"""


class NumericalError(WhitebedError):
    """Input is degenerate for the requested operation (e.g. zero-norm row)"""


class GraphStateError(WhitebedError):
    """Graph used out of order (unbound input, backward before forward)"""


class FactorizationError(WhitebedError):
    """Cholesky factorization met a non-positive pivot"""

    def __init__(self, pivot: int, message: Optional[str] = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (failing pivot {pivot})")


class WhiteningError(WhitebedError):
    """Whitening of one sub-batch failed"""

    def __init__(self, sub_batch: int, cause: FactorizationError):
        self.sub_batch = sub_batch
        self.pivot = cause.pivot
        super().__init__(f"whitening failed in sub-batch {sub_batch}: {cause}")


class DatasetFormatError(WhitebedError):
    """Dataset file does not match the binary record format"""


class TrainingError(WhitebedError):
    """Training step failed; carries the position in the schedule"""

    def __init__(self, message: str, epoch: int = -1, iteration: int = -1,
                 parameter: Optional[str] = None):
        self.epoch = epoch
        self.iteration = iteration
        self.parameter = parameter
        where = f"epoch {epoch}, iteration {iteration}"
        if parameter:
            where += f", parameter '{parameter}'"
        super().__init__(f"{message} ({where})")


class DivergenceError(TrainingError):
    """Loss or gradient became non-finite"""
