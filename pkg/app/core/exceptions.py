"""
Exception hierarchy shared by the services, the CLI and the API.
"""

from typing import Optional


class PCLabError(Exception):
    """Base class for all PCLab errors."""

    exit_code = 1


class UsageError(PCLabError):
    """Invalid invocation or configuration."""

    exit_code = 1


class DataError(PCLabError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(PCLabError):
    """Training could not continue (e.g. non-finite gradients)."""

    exit_code = 3


class StageError(PCLabError):
    """
    A pipeline stage failed; wraps the underlying cause.

    The exit code is the cause's own when it is a PCLab error. Other
    ValueError and OSError causes are data problems (exit 2); anything
    else counts as a training failure (exit 3).
    """

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        if isinstance(cause, PCLabError):
            self.exit_code = cause.exit_code
        elif isinstance(cause, (ValueError, OSError)):
            self.exit_code = DataError.exit_code
        else:
            self.exit_code = TrainingError.exit_code
