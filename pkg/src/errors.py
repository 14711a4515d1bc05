"""
Exception types raised by the toolkit.
Each carries the process exit code the command line maps it to.
"""
from typing import Optional


class TrajkitError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2


class ShapeError(TrajkitError, ValueError):
    """Raised when tensor or model shapes do not satisfy an operation's contract."""


class ScalingError(TrajkitError, ValueError):
    """Invalid scaling coefficients."""

    exit_code = 4


class ConstraintError(ScalingError):
    def __init__(self, product: float, tol: float):
        self.product = product
        self.tol = tol
        super().__init__(
            f"alpha*beta^2*gamma^2 = {product:.6f} is not within {tol} of 2"
        )


class SearchError(TrajkitError):
    exit_code = 4


class SceneFormatError(TrajkitError, ValueError):
    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataIOError(TrajkitError):
    exit_code = 2


class NumericalAbort(TrajkitError, RuntimeError):
    exit_code = 3

    def __init__(self, message: str, replay_path: Optional[str] = None):
        self.replay_path = replay_path
        if replay_path:
            message = f"{message} (replay record: {replay_path})"
        super().__init__(message)
