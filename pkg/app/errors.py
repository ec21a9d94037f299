"""
Exception hierarchy for the adaptation toolkit.
"""

from typing import Optional


class AdaptError(Exception):
    """Base class for all toolkit errors."""


class MeshError(AdaptError):
    """Invalid mesh data, unknown entity or unreadable mesh file."""


class GeometryRejected(AdaptError):
    """A local mesh operation would produce an inverted or degenerate element."""


class SolverError(AdaptError):
    """Singular or non-convergent linear system."""

    def __init__(self, message: str, iterations: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations


class StaleFieldError(AdaptError):
    """A field was computed on an older generation of the mesh."""


class ConfigError(AdaptError):
    """Invalid run configuration."""
