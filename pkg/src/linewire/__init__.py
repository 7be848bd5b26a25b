"""linewire: building wireframe reconstruction from 3D line clouds."""

from .geometry import (
    Camera,
    GeometryError,
    LineCloud,
    LineLabel,
    LineSegment,
    NormalizeTransform,
    Support2D,
    Wireframe,
    graph_distance,
    normalize_cloud,
    point_to_line_distance,
    validate_wireframe,
)

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "GeometryError",
    "LineCloud",
    "LineLabel",
    "LineSegment",
    "NormalizeTransform",
    "Support2D",
    "Wireframe",
    "graph_distance",
    "normalize_cloud",
    "point_to_line_distance",
    "validate_wireframe",
    "__version__",
]
