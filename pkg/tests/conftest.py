import numpy as np
import pytest

from linewire.geometry import LineCloud, Wireframe


def cube_wireframe(side: float = 1.0, origin=(0.0, 0.0, 0.0)) -> Wireframe:
    """Axis-aligned cube: 8 vertices, 12 edges."""
    o = np.asarray(origin, dtype=float)
    verts = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ], dtype=float) * side + o
    edges = [
        (0, 1), (1, 2), (2, 3), (0, 3),
        (4, 5), (5, 6), (6, 7), (4, 7),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ]
    return Wireframe(verts, np.array(edges))


def random_cloud(rng: np.random.Generator, n: int, extent: float = 1.0) -> LineCloud:
    """Random segments inside a cube of the given extent, lengths bounded away from 0."""
    p = rng.uniform(-extent, extent, size=(n, 3))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    lengths = rng.uniform(0.05 * extent, 0.5 * extent, size=(n, 1))
    q = p + d * lengths
    return LineCloud(np.stack([p, q], axis=1))


def segments_on_wireframe(wf: Wireframe, per_edge: int = 3) -> LineCloud:
    """Tile each wireframe edge with per_edge abutting sub-segments."""
    rows = []
    for a, b in wf.edges:
        va, vb = wf.vertices[a], wf.vertices[b]
        ts = np.linspace(0.0, 1.0, per_edge + 1)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            rows.append([va + t0 * (vb - va), va + t1 * (vb - va)])
    return LineCloud(np.asarray(rows))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
