"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`QRError`,
so callers (and the CLI) can separate input problems from numerical ones.
"""

from __future__ import annotations

import numpy as np


class QRError(Exception):
    """Base class for package errors."""


class InputError(QRError, ValueError):
    """Bad user input: shapes, domains, grids, files."""


class DomainError(InputError):
    pass


class ShapeError(InputError):
    pass


class GridError(InputError):
    pass


class RangeError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class RankError(InputError):
    pass


class SizeError(InputError):
    pass


class NumericalError(QRError, ArithmeticError):
    """A computation failed on valid input."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, beta: np.ndarray | None = None, gap: float = float("nan")):
        super().__init__(message)
        self.beta = beta
        self.gap = gap


class SingularJacobianError(NumericalError):
    def __init__(self, message: str, tau: float = float("nan"), min_eigenvalue: float = float("nan")):
        super().__init__(message)
        self.tau = tau
        self.min_eigenvalue = min_eigenvalue


class ProcessError(NumericalError):
    """One-step marching broke down at a specific quantile index."""

    def __init__(self, message: str, tau: float = float("nan")):
        super().__init__(message)
        self.tau = tau


class BootstrapError(NumericalError):
    def __init__(self, message: str, failed: int = 0, total: int = 0):
        super().__init__(message)
        self.failed = failed
        self.total = total
