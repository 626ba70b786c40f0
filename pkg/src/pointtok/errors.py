"""Exception types shared across the package."""


class PointTokError(Exception):
    """Base class for all pointtok errors."""


class ParseError(PointTokError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class EmptyCloud(PointTokError):
    """Input contained zero points."""


class UnsupportedFormat(PointTokError):
    """File format recognized but not supported (e.g. binary PLY)."""


class OutOfBounds(PointTokError):
    """Point lies outside the grid bounds beyond tolerance."""


class TargetExceedsInput(PointTokError):
    """FPS target larger than the candidate set."""


class StrategyParamMissing(PointTokError):
    """Ordering strategy lacks a required parameter."""


class IndexOutOfRange(PointTokError):
    """Cell index does not fit in the requested curve order."""


class IoError(PointTokError):
    """Export/import violation (truncated sidecar, empty matrix, ...)."""


class ShapeMismatch(PointTokError):
    """Patch vector length inconsistent with the model configuration."""


class EmptyMask(PointTokError):
    """Loss mask selects no positions."""


class GradMismatch(PointTokError):
    """Analytic gradient disagrees with the finite-difference oracle."""

    def __init__(self, message: str, offenders: list | None = None):
        super().__init__(message)
        self.offenders = offenders or []


class DivergenceDetected(PointTokError):
    """Training loss became non-finite."""
