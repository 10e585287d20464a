"""Exception taxonomy shared by all modules.

Every failure the toolkit can signal maps to one of these classes so the
CLI can translate them into stable exit codes.
"""

from __future__ import annotations


class SpecxaiError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SpecxaiError):
    """Shapes of the operands are incompatible."""


class NumericError(SpecxaiError):
    """Non-finite values or a violated numerical identity."""


class ResourceError(SpecxaiError):
    """An explicit matrix would exceed the element budget."""


class CapabilityError(SpecxaiError):
    """A layer kind or mode the toolkit does not support."""


class RegionBoundaryError(SpecxaiError):
    """The input sits on (or probes cross) a linear-region boundary."""


class NormalizationError(SpecxaiError):
    """A vector that must be unit length is not."""


class TrainingError(SpecxaiError):
    """Training diverged; carries the epoch where it happened."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class ModelFormatError(SpecxaiError):
    """A model or tensor file failed validation on load."""


class UsageError(SpecxaiError):
    """Command-line arguments are inconsistent."""
