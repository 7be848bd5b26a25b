"""Core geometric and graph types: line segments, line clouds, wireframes, cameras.

Coordinates are float64 throughout. All types are immutable after construction
and all operations are pure functions, so everything here is safe to evaluate
in parallel over independent inputs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

DEGENERATE_TOL = 1e-12
DUP_VERTEX_TOL = 1e-6


class GeometryError(ValueError):
    """Raised for degenerate or inconsistent geometric input."""


def as_vec3(x) -> np.ndarray:
    """Coerce to a finite float64 array of shape (3,)."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise GeometryError(f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise GeometryError(f"non-finite vector components: {v}")
    return v


@dataclass(frozen=True)
class LineSegment:
    """A 3D line segment given by its two endpoints."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", as_vec3(self.p))
        object.__setattr__(self, "q", as_vec3(self.q))
        if float(np.linalg.norm(self.q - self.p)) < DEGENERATE_TOL:
            raise GeometryError("degenerate segment: endpoints coincide")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.q - self.p))

    @property
    def direction(self) -> np.ndarray:
        d = self.q - self.p
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class LineLabel:
    """Per-segment supervision label.

    f is 1 if the segment belongs to the underlying wireframe, in which case
    (i1, i2) are the endpoint junction indices of the owning edge and d1 <= d2
    are the distances from the segment to those junctions. For f = 0 the
    index fields hold the sentinel -1 and the distances are 0.
    """

    f: int
    i1: int = -1
    d1: float = 0.0
    i2: int = -1
    d2: float = 0.0

    def __post_init__(self):
        if self.f not in (0, 1):
            raise GeometryError(f"label flag must be 0 or 1, got {self.f}")
        if self.f == 1:
            if self.i1 < 0 or self.i2 < 0 or self.i1 == self.i2:
                raise GeometryError(f"positive label needs two distinct junction indices, got ({self.i1}, {self.i2})")
            if self.d1 < 0 or self.d2 < 0:
                raise GeometryError("junction distances must be non-negative")


@dataclass(frozen=True)
class Support2D:
    """A detected 2D segment (in pixels) that contributed to a 3D segment."""

    view: int
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(2)
        b = np.asarray(self.b, dtype=np.float64).reshape(2)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.view < 0:
            raise GeometryError("support view id must be non-negative")
        if np.allclose(a, b):
            raise GeometryError("support endpoints coincide")


class LineCloud:
    """An ordered set of 3D line segments, optionally labeled.

    Internally stores an (n, 2, 3) float64 array. `labels` is an optional
    structured view with parallel arrays f/i1/d1/i2/d2, and `supports` an
    optional parallel list of per-segment Support2D lists.
    """

    def __init__(self, segments, labels=None, supports=None):
        if isinstance(segments, np.ndarray):
            arr = np.asarray(segments, dtype=np.float64)
        else:
            rows = []
            for s in segments:
                if isinstance(s, LineSegment):
                    rows.append([s.p, s.q])
                else:
                    rows.append(np.asarray(s, dtype=np.float64).reshape(2, 3))
            arr = np.asarray(rows, dtype=np.float64).reshape(-1, 2, 3)
        if arr.ndim != 3 or arr.shape[1:] != (2, 3):
            raise GeometryError(f"segment array must have shape (n, 2, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise GeometryError("non-finite segment coordinates")
        lengths = np.linalg.norm(arr[:, 1] - arr[:, 0], axis=1)
        if np.any(lengths < DEGENERATE_TOL):
            bad = int(np.argmin(lengths))
            raise GeometryError(f"degenerate segment at index {bad}")
        self._segs = arr
        self._segs.setflags(write=False)

        self.labels = None
        if labels is not None:
            labs = LabelArray.from_labels(labels)
            if len(labs) != len(arr):
                raise GeometryError(f"labels length {len(labs)} != segment count {len(arr)}")
            self.labels = labs

        self.supports = None
        if supports is not None:
            sups = [list(s) for s in supports]
            if len(sups) != len(arr):
                raise GeometryError(f"supports length {len(sups)} != segment count {len(arr)}")
            self.supports = sups

    def __len__(self) -> int:
        return self._segs.shape[0]

    @property
    def array(self) -> np.ndarray:
        """(n, 2, 3) endpoint array, read-only."""
        return self._segs

    @property
    def endpoints(self) -> np.ndarray:
        """(2n, 3) array of all endpoints, p rows first then q rows interleaved per segment."""
        return self._segs.reshape(-1, 3)

    def segment(self, i: int) -> LineSegment:
        return LineSegment(self._segs[i, 0], self._segs[i, 1])

    def label(self, i: int) -> LineLabel:
        if self.labels is None:
            raise GeometryError("cloud carries no labels")
        return self.labels.label(i)

    def with_labels(self, labels) -> "LineCloud":
        return LineCloud(self._segs, labels=labels, supports=self.supports)

    def bbox_diagonal(self) -> float:
        pts = self.endpoints
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


class LabelArray:
    """Column storage for per-segment labels."""

    def __init__(self, f, i1, d1, i2, d2):
        self.f = np.asarray(f, dtype=np.int8)
        self.i1 = np.asarray(i1, dtype=np.int64)
        self.d1 = np.asarray(d1, dtype=np.float64)
        self.i2 = np.asarray(i2, dtype=np.int64)
        self.d2 = np.asarray(d2, dtype=np.float64)
        n = len(self.f)
        for col in (self.i1, self.d1, self.i2, self.d2):
            if len(col) != n:
                raise GeometryError("label columns have mismatched lengths")

    @classmethod
    def from_labels(cls, labels) -> "LabelArray":
        if isinstance(labels, LabelArray):
            return labels
        return cls(
            [l.f for l in labels],
            [l.i1 for l in labels],
            [l.d1 for l in labels],
            [l.i2 for l in labels],
            [l.d2 for l in labels],
        )

    def label(self, i: int) -> LineLabel:
        return LineLabel(int(self.f[i]), int(self.i1[i]), float(self.d1[i]), int(self.i2[i]), float(self.d2[i]))

    def __len__(self) -> int:
        return len(self.f)

    def scaled(self, s: float) -> "LabelArray":
        """Same labels with junction distances scaled by s (coordinate rescaling)."""
        return LabelArray(self.f, self.i1, self.d1 * s, self.i2, self.d2 * s)


@dataclass
class Wireframe:
    """A 3D graph: junction vertices connected by straight edges.

    Edges are stored canonically with a < b so duplicate detection is a set
    lookup. Optional per-vertex / per-edge confidences live in [0, 1].
    """

    vertices: np.ndarray
    edges: np.ndarray
    vertex_conf: np.ndarray | None = None
    edge_conf: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edges.size:
            self.edges = np.sort(self.edges, axis=1)
        if self.vertex_conf is not None:
            self.vertex_conf = np.asarray(self.vertex_conf, dtype=np.float64).reshape(-1)
        if self.edge_conf is not None:
            self.edge_conf = np.asarray(self.edge_conf, dtype=np.float64).reshape(-1)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def edge_set(self) -> set:
        return {(int(a), int(b)) for a, b in self.edges}

    def adjacency(self) -> list[list[int]]:
        adj = [[] for _ in range(self.n_vertices)]
        for a, b in self.edges:
            adj[int(a)].append(int(b))
            adj[int(b)].append(int(a))
        return adj

    def edge_lengths(self) -> np.ndarray:
        if self.n_edges == 0:
            return np.zeros(0)
        return np.linalg.norm(self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]], axis=1)

    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: x_img ~ K (R X + t), pixel coordinates in [0, w) x [0, h)."""

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = as_vec3(self.translation)
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        err = float(np.abs(r @ r.T - np.eye(3)).max())
        if err > 1e-6:
            raise GeometryError(f"rotation not orthonormal (max deviation {err:.2e})")
        if np.linalg.det(r) < 0:
            raise GeometryError("rotation has negative determinant (reflection)")
        if k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0:
            raise GeometryError("intrinsics must be upper-triangular")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise GeometryError("focal terms must be positive")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive")

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points to pixels.

        Returns (pixels (n, 2), depths (n,)). Points with depth <= 0 lie behind
        the camera; their pixel coordinates are not meaningful.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cam = pts @ self.rotation.T + self.translation
        depths = cam[:, 2]
        safe = np.where(np.abs(depths) < 1e-12, 1e-12, depths)
        proj = cam @ self.intrinsics.T
        return proj[:, :2] / safe[:, None], depths


def point_to_line_distance(x, seg: LineSegment) -> float:
    """Distance from point x to the infinite line through the segment.

    |(x - p) x (q - p)| / |q - p|; invariant to swapping p and q and to
    rescaling the direction.
    """
    x = as_vec3(x)
    d = seg.q - seg.p
    n = np.linalg.norm(d)
    if n < DEGENERATE_TOL:
        raise GeometryError("degenerate segment in distance query")
    return float(np.linalg.norm(np.cross(x - seg.p, d)) / n)


def points_to_lines_distance(x, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Vectorized point-to-infinite-line distance for one point against many segments."""
    x = as_vec3(x)
    d = ends - starts
    n = np.linalg.norm(d, axis=1)
    if np.any(n < DEGENERATE_TOL):
        raise GeometryError("degenerate segment in distance query")
    c = np.cross(x - starts, d)
    return np.linalg.norm(c, axis=1) / n


def point_to_segment_distance(x, p, q) -> float:
    """Distance from a point to the segment (not the infinite line)."""
    x, p, q = as_vec3(x), as_vec3(p), as_vec3(q)
    d = q - p
    t = float(np.dot(x - p, d) / np.dot(d, d))
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(x - (p + t * d)))


def graph_distance(wf: Wireframe, a: int, b: int, cap: int = 2) -> int | None:
    """BFS hop count between vertices a and b, or None if beyond cap or disconnected."""
    n = wf.n_vertices
    if not (0 <= a < n and 0 <= b < n):
        raise GeometryError(f"vertex index out of range: ({a}, {b}) with {n} vertices")
    if cap < 1:
        raise GeometryError(f"cap must be >= 1, got {cap}")
    if a == b:
        return 0
    adj = wf.adjacency()
    seen = {a}
    frontier = deque([(a, 0)])
    while frontier:
        v, d = frontier.popleft()
        if d >= cap:
            continue
        for w in adj[v]:
            if w == b:
                return d + 1
            if w not in seen:
                seen.add(w)
                frontier.append((w, d + 1))
    return None


def validate_wireframe(wf: Wireframe, dup_tol: float = DUP_VERTEX_TOL) -> list[str]:
    """Check all Wireframe invariants; returns a list of human-readable violations.

    Empty list means the wireframe is well formed. Violations are data, not
    errors: callers decide how to react.
    """
    out = []
    n = wf.n_vertices
    if not np.all(np.isfinite(wf.vertices)):
        out.append("non-finite vertex coordinates")
    seen = set()
    for k, (a, b) in enumerate(wf.edges):
        a, b = int(a), int(b)
        if a == b:
            out.append(f"self-loop at vertex {a} (edge {k})")
            continue
        if a < 0 or b < 0 or a >= n or b >= n:
            out.append(f"edge {k} references missing vertex ({a}, {b})")
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            out.append(f"duplicate edge {key}")
        seen.add(key)
    if n > 1 and dup_tol > 0:
        # pairwise check; wireframes are small so the quadratic scan is fine
        d2 = np.sum((wf.vertices[:, None, :] - wf.vertices[None, :, :]) ** 2, axis=2)
        iu = np.triu_indices(n, k=1)
        close = np.nonzero(d2[iu] <= dup_tol * dup_tol)[0]
        for c in close:
            out.append(f"duplicate vertex positions ({iu[0][c]}, {iu[1][c]})")
    if wf.vertex_conf is not None:
        if len(wf.vertex_conf) != n:
            out.append("vertex confidence length mismatch")
        elif n and (wf.vertex_conf.min() < 0 or wf.vertex_conf.max() > 1):
            out.append("vertex confidence outside [0, 1]")
    if wf.edge_conf is not None:
        if len(wf.edge_conf) != wf.n_edges:
            out.append("edge confidence length mismatch")
        elif wf.n_edges and (wf.edge_conf.min() < 0 or wf.edge_conf.max() > 1):
            out.append("edge confidence outside [0, 1]")
    return out


@dataclass(frozen=True)
class NormalizeTransform:
    """Maps world coordinates to normalized ones: y = scale * (x - center)."""

    center: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center

    def apply_cloud(self, lc: LineCloud) -> LineCloud:
        segs = self.apply(lc.array.reshape(-1, 3)).reshape(-1, 2, 3)
        labels = lc.labels.scaled(self.scale) if lc.labels is not None else None
        return LineCloud(segs, labels=labels, supports=lc.supports)

    def apply_wireframe(self, wf: Wireframe) -> Wireframe:
        return Wireframe(self.apply(wf.vertices), wf.edges.copy(),
                         vertex_conf=None if wf.vertex_conf is None else wf.vertex_conf.copy(),
                         edge_conf=None if wf.edge_conf is None else wf.edge_conf.copy())

    def invert_wireframe(self, wf: Wireframe) -> Wireframe:
        return Wireframe(self.invert(wf.vertices), wf.edges.copy(),
                         vertex_conf=None if wf.vertex_conf is None else wf.vertex_conf.copy(),
                         edge_conf=None if wf.edge_conf is None else wf.edge_conf.copy())


def normalize_cloud(lc: LineCloud) -> tuple[LineCloud, NormalizeTransform]:
    """Center endpoints at their centroid and scale the bounding-box diagonal to 1.

    Returns the normalized cloud and the transform whose invert() maps
    predictions back to world coordinates.
    """
    if len(lc) == 0:
        raise GeometryError("cannot normalize an empty cloud")
    pts = lc.endpoints
    center = pts.mean(axis=0)
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diag < DEGENERATE_TOL:
        raise GeometryError("cloud has zero extent")
    tf = NormalizeTransform(center=center, scale=1.0 / diag)
    return tf.apply_cloud(lc), tf
