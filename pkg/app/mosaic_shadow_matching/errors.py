"""
Exceptions raised by the Mosaic Shadow Matching modules.

Everything derives from ShadowMatchingError so callers (the HTTP surface and
the CLI) can catch the whole family in one place.
"""

from typing import List, Optional


class ShadowMatchingError(RuntimeError):
    """Base class for every domain error."""
    pass


class ConfigError(ShadowMatchingError):
    """An MZSM_* environment override is malformed."""
    pass


class InvalidGeometry(ShadowMatchingError):
    """
    A ring or region violates its invariants.

    Raised for rings with fewer than three vertices, non-finite coordinates,
    self-intersections, or holes that escape their outer ring.
    """
    pass


class EmptyRegion(ShadowMatchingError):
    """Sampling was requested from a region with zero area."""
    pass


class DegenerateNode(ShadowMatchingError):
    """A tree node region has area at or below eps_area."""
    pass


class ProbabilityOutOfRange(ShadowMatchingError, ValueError):
    """A probability lies outside [0, 1] (or outside (0, 1] for a prior)."""
    pass


class AllMassLost(ShadowMatchingError):
    """Every leaf has zero mass, so the PMF cannot be normalized."""
    pass


class OracleCapExceeded(ShadowMatchingError):
    """The full-tree oracle was asked for more shadows than its cap allows."""
    pass


class UnreachableConfidence(ShadowMatchingError, ValueError):
    """The requested confidence level is outside (0, 1] or more than the sets hold."""
    pass


class SingularFit(ShadowMatchingError):
    """EM collapsed (empty component or non-SPD covariance) despite regularization."""
    pass


class BothEmpty(ShadowMatchingError):
    """IOU is undefined because both regions have zero area."""
    pass


class InvariantViolation(ShadowMatchingError):
    """A harness row breaks a module-level invariant."""
    pass


class SchemaError(ShadowMatchingError):
    """
    A scenario document does not match the schema.

    Attributes:
        diagnostics (List[str]): One entry per offending field or line.
    """

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        return base + ": " + "; ".join(self.diagnostics)
