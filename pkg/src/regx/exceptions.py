"""Exception classes for the regx registration engine."""

from __future__ import annotations

from pathlib import Path
from typing import ClassVar

__all__ = [
    "RegxError",
    "VolumeFormatError",
    "VolumeIOError",
    "ShapeMismatchError",
    "BudgetExceededError",
    "ConfigError",
    "NonFiniteError",
    "EvaluationError",
]


class RegxError(Exception):
    """Base exception for all regx errors.

    Every subclass names a ``category`` that the command line prints in its
    one-line error summary, so failures can be grepped without parsing prose.
    """

    category: ClassVar[str] = "internal"


class VolumeFormatError(RegxError):
    """Raised when a file cannot be decoded as a supported volume format."""

    category = "format"

    def __init__(self, path: str | Path, cause: str) -> None:
        """Initialize format error with context.

        Args:
            path: The offending file
            cause: Human-readable cause description
        """
        self.path = Path(path)
        self.cause = cause
        super().__init__(f"Cannot read '{self.path}': {cause}")


class VolumeIOError(RegxError):
    """Raised when reading or writing a file fails at the operating-system level."""

    category = "io"

    def __init__(self, path: str | Path, cause: str) -> None:
        self.path = Path(path)
        self.cause = cause
        super().__init__(f"I/O failure on '{self.path}': {cause}")


class ShapeMismatchError(RegxError):
    """Raised when grids, spacings or channel counts do not line up."""

    category = "shape"

    def __init__(self, what: str, expected: object, actual: object) -> None:
        """Initialize shape error.

        Args:
            what: Which quantity disagreed (e.g. "dims", "spacing")
            expected: The value required by the operation
            actual: The value that was supplied
        """
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} mismatch: expected {expected}, got {actual}")


class BudgetExceededError(RegxError):
    """Raised when a search space needs more displacements than allowed."""

    category = "budget"

    def __init__(
        self,
        count: int,
        budget: int,
        extent: tuple[int, int, int],
        quantisation: int,
    ) -> None:
        self.count = count
        self.budget = budget
        self.extent = extent
        self.quantisation = quantisation
        super().__init__(
            f"Search space needs {count} displacements (budget {budget}):\n"
            f"  Extent: {extent} steps per direction\n"
            f"  Quantisation: {quantisation} voxel(s) per step"
        )


class ConfigError(RegxError):
    """Raised for invalid configuration values, presets or missing inputs."""

    category = "config"

    def __init__(self, key: str, cause: str) -> None:
        self.key = key
        self.cause = cause
        super().__init__(f"Invalid configuration '{key}': {cause}")


class NonFiniteError(RegxError):
    """Raised when a volume, loss or gradient holds NaN or infinite values.

    This usually means the features are degenerate or the step size is too
    large for the problem at hand.
    """

    category = "numeric"

    def __init__(self, stage: str, detail: str, iteration: int | None = None) -> None:
        self.stage = stage
        self.iteration = iteration
        self.detail = detail
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"Non-finite values in stage '{stage}'{where}: {detail}")


class EvaluationError(RegxError):
    """Raised when a metric cannot be computed from the supplied inputs."""

    category = "evaluation"

    def __init__(self, cause: str) -> None:
        self.cause = cause
        super().__init__(cause)
