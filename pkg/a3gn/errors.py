"""Exception hierarchy shared by every module."""

from typing import Any, Dict, Optional


class A3GNError(Exception):
    """Base class for all errors raised by the package."""


class RejectedInputError(A3GNError, ValueError):
    """An argument violates a shape or value precondition."""


class ConfigurationError(A3GNError):
    """Invalid configuration, empty dataset or unusable architecture settings."""


class NumericalError(A3GNError):
    """A non-finite value appeared in a forward or backward pass."""

    def __init__(
        self,
        message: str,
        iteration: Optional[int] = None,
        values: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.iteration = iteration
        self.values = values or {}


class DegenerateEmbeddingError(A3GNError):
    """An embedding has zero norm or carries no information."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class ModeViolationError(A3GNError):
    """Gradients were requested from a feature-only (black-box) embedder."""


class ReportParseError(A3GNError):
    """A report or curve file could not be parsed."""

    def __init__(self, path: Any, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
