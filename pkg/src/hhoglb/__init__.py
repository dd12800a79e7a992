"""Guaranteed lower eigenvalue bounds from hybrid high-order discretizations on triangles."""

__version__ = "0.1.0"
