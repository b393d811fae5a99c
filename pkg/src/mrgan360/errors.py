"""Shared exception types."""


class MRGANError(Exception):
    """Base class for all structured errors raised by this package."""


class ShapeError(MRGANError):
    """Tensor or image extents disagree with what an operation requires."""


class NonFiniteError(MRGANError):
    """A NaN or Inf showed up where only finite values are allowed."""


class GeometryError(MRGANError):
    """Invalid view specification (degenerate FOV, bad extents, ...)."""


class CoverageError(MRGANError):
    """Viewport set does not cover the full sphere."""

    def __init__(self, uncovered_fraction: float):
        self.uncovered_fraction = uncovered_fraction
        super().__init__(
            f"incomplete sphere coverage: {uncovered_fraction:.4%} "
            "of the solid angle has no contributing viewport"
        )


class MetricError(MRGANError):
    """Degenerate metric input (empty fixations, zero variance, ...)."""


class CheckpointError(MRGANError):
    """Malformed or mismatched checkpoint file."""


class ConfigError(MRGANError):
    """Invalid training or CLI configuration."""
