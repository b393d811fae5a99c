"""Multi-stage recurrent adversarial saliency prediction for 360 images."""

from .errors import (CheckpointError, ConfigError, CoverageError,
                     GeometryError, MetricError, MRGANError, NonFiniteError,
                     ShapeError)
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "MRGANError", "ShapeError", "NonFiniteError", "GeometryError",
    "CoverageError", "MetricError", "CheckpointError", "ConfigError",
    "__version__",
]
