"""Query-point sampling and line-patch assembly.

A line patch around a query point x collects every segment whose supporting
infinite line passes within `eps` of x, as a fixed-size zero-padded feature
tensor. A uniform grid accelerates membership queries; `scan_members` is the
brute-force reference used by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, LineCloud, as_vec3

SINGLE_FEATURE_WIDTH = 7
PAIR_FEATURE_WIDTH = 9


def fps(points: np.ndarray, k: int, seed_index: int = 0) -> list[int]:
    """Greedy farthest point sampling.

    Each selected point maximizes the minimum distance to the already-selected
    set; ties break toward the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if not (1 <= k <= n):
        raise GeometryError(f"fps: k={k} out of range for {n} points")
    if not (0 <= seed_index < n):
        raise GeometryError(f"fps: seed index {seed_index} out of range")
    selected = [seed_index]
    dmin = np.linalg.norm(pts - pts[seed_index], axis=1)
    while len(selected) < k:
        nxt = int(np.argmax(dmin))  # argmax returns the first (lowest-index) maximum
        selected.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(pts - pts[nxt], axis=1))
    return selected


def _fps_continue(pts: np.ndarray, selected: list[int], total: int) -> list[int]:
    """Extend an existing selection greedily until it has `total` points."""
    selected = list(selected)
    if not selected:
        selected = [0]
    dmin = np.full(pts.shape[0], np.inf)
    for s in selected:
        dmin = np.minimum(dmin, np.linalg.norm(pts - pts[s], axis=1))
    while len(selected) < total:
        nxt = int(np.argmax(dmin))
        selected.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(pts - pts[nxt], axis=1))
    return selected


@dataclass
class QueryPoints:
    points: np.ndarray        # (g, 3)
    indices: np.ndarray       # (g,) indices into the distinct-endpoint array
    endpoints: np.ndarray     # (n, 3) distinct endpoints the indices refer to
    truncated: bool           # True when fewer distinct endpoints than requested


def distinct_endpoints(lc: LineCloud) -> np.ndarray:
    """All segment endpoints with exact duplicates removed, first occurrence order."""
    pts = lc.endpoints
    _, first = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(first)]


def sample_query_points(lc: LineCloud, g: int, density_fraction: float = 0.25,
                        seed: int = 0, density_radius: float | None = None,
                        eps: float = 0.03) -> QueryPoints:
    """Sample g query points from segment endpoints.

    The first ceil(density_fraction * g) points are drawn without replacement
    with probability proportional to local endpoint density (endpoint count
    within `density_radius`, default 2 * eps); the rest continue farthest
    point sampling seeded with the density-drawn set. Deterministic per seed.
    """
    if len(lc) == 0:
        raise GeometryError("cannot sample from an empty cloud")
    if not (0.0 <= density_fraction <= 1.0):
        raise GeometryError(f"density fraction must be in [0, 1], got {density_fraction}")
    if g < 1:
        raise GeometryError(f"need g >= 1, got {g}")
    pts = distinct_endpoints(lc)
    n = pts.shape[0]
    if g >= n:
        return QueryPoints(points=pts.copy(), indices=np.arange(n), endpoints=pts,
                           truncated=g > n)

    rng = np.random.default_rng(seed)
    radius = 2.0 * eps if density_radius is None else density_radius
    n_density = int(np.ceil(density_fraction * g))
    chosen: list[int] = []
    if n_density > 0:
        counts = _neighbor_counts(pts, radius)
        weights = counts / counts.sum()
        chosen = list(rng.choice(n, size=n_density, replace=False, p=weights))
    order = _fps_continue(pts, chosen, g)
    idx = np.asarray(order[:g], dtype=np.int64)
    return QueryPoints(points=pts[idx], indices=idx, endpoints=pts, truncated=False)


def _neighbor_counts(pts: np.ndarray, radius: float) -> np.ndarray:
    """Endpoint count within `radius` of each point (self included)."""
    n = pts.shape[0]
    counts = np.zeros(n, dtype=np.float64)
    block = max(1, int(4e6 // max(n, 1)))
    r2 = radius * radius
    for start in range(0, n, block):
        chunk = pts[start:start + block]
        d2 = np.sum((chunk[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        counts[start:start + block] = np.sum(d2 <= r2, axis=1)
    return counts


# ---------------------------------------------------------------------------
# membership queries


def _line_geometry(lc: LineCloud):
    arr = lc.array
    starts = arr[:, 0]
    d = arr[:, 1] - arr[:, 0]
    norms = np.linalg.norm(d, axis=1)
    return starts, d / norms[:, None]


def _distances_to_lines(x: np.ndarray, starts: np.ndarray, units: np.ndarray) -> np.ndarray:
    rel = x - starts
    c = np.cross(rel, units)
    return np.linalg.norm(c, axis=1)


def scan_members(lc: LineCloud, x, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force membership: indices and distances of all segments whose
    infinite line passes within eps of x. The reference the grid is tested against."""
    x = as_vec3(x)
    starts, units = _line_geometry(lc)
    d = _distances_to_lines(x, starts, units)
    idx = np.nonzero(d <= eps)[0]
    return idx, d[idx]


class SegmentGrid:
    """Uniform grid over the cloud domain indexing each segment's infinite line.

    Each line is clipped to the (eps-dilated) cloud bounding box and marched at
    half-cell steps; visited cells and their 3x3x3 neighborhoods register the
    segment. Queries inside the domain then only verify the candidates in the
    query's cell; membership equals the brute-force scan exactly because cell
    size >= eps bounds how far a within-eps point can land from a line cell.
    """

    def __init__(self, lc: LineCloud, eps: float):
        if eps < 0:
            raise GeometryError(f"patch radius must be >= 0, got {eps}")
        self.cloud = lc
        self.eps = float(eps)
        self._starts, self._units = _line_geometry(lc)
        pts = lc.endpoints
        lo = pts.min(axis=0) - eps
        hi = pts.max(axis=0) + eps
        diag = float(np.linalg.norm(hi - lo))
        self.cell = max(2.0 * eps, diag / 128.0, 1e-9)
        self.lo = lo
        self.hi = hi
        self._dims = np.maximum(1, np.ceil((hi - lo) / self.cell).astype(np.int64))
        self._cells: dict[tuple[int, int, int], list[int]] = {}
        for i in range(len(lc)):
            self._register_line(i)
        # freeze candidate lists as arrays for fast verification
        self._cells = {k: np.asarray(v, dtype=np.int64) for k, v in self._cells.items()}

    def _cell_of(self, p: np.ndarray) -> np.ndarray:
        return np.clip(((p - self.lo) / self.cell).astype(np.int64), 0, self._dims - 1)

    def _register_line(self, i: int) -> None:
        p, u = self._starts[i], self._units[i]
        t0, t1 = self._clip_to_box(p, u)
        if t0 is None:
            return
        step = self.cell / 2.0
        n_steps = max(1, int(np.ceil((t1 - t0) / step)))
        ts = np.linspace(t0, t1, n_steps + 1)
        samples = p[None, :] + ts[:, None] * u[None, :]
        cells = np.unique(self._cell_of(samples), axis=0)
        marked = set()
        for c in cells:
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        key = (int(c[0]) + dx, int(c[1]) + dy, int(c[2]) + dz)
                        if key not in marked:
                            marked.add(key)
        for key in marked:
            self._cells.setdefault(key, []).append(i)

    def _clip_to_box(self, p: np.ndarray, u: np.ndarray):
        """Intersect the infinite line p + t*u with the domain box (slab method)."""
        t0, t1 = -np.inf, np.inf
        for ax in range(3):
            if abs(u[ax]) < 1e-15:
                if not (self.lo[ax] <= p[ax] <= self.hi[ax]):
                    return None, None
                continue
            ta = (self.lo[ax] - p[ax]) / u[ax]
            tb = (self.hi[ax] - p[ax]) / u[ax]
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                return None, None
        if not np.isfinite(t0) or not np.isfinite(t1):
            return None, None
        return t0, t1

    def query(self, x, eps: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Members within eps of x (defaults to the build radius).

        Exact: candidates are verified with the true point-to-line distance.
        Falls back to the full scan for query radii beyond the build radius or
        for points outside the indexed domain.
        """
        x = as_vec3(x)
        eps = self.eps if eps is None else float(eps)
        if eps > self.eps or np.any(x < self.lo) or np.any(x > self.hi):
            return scan_members(self.cloud, x, eps)
        key = tuple(int(v) for v in self._cell_of(x))
        cand = self._cells.get(key)
        if cand is None or len(cand) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        d = _distances_to_lines(x, self._starts[cand], self._units[cand])
        keep = d <= eps
        return cand[keep], d[keep]


# ---------------------------------------------------------------------------
# patch assembly


@dataclass
class LinePatch:
    """Fixed-size feature block for one query point (or point pair).

    Rows beyond `valid_count` are zero and masked out. Feature rows hold
    endpoint coordinates relative to the patch center plus distance terms;
    width is 7 for single patches and 9 for pair patches.
    """

    center: np.ndarray
    features: np.ndarray
    mask: np.ndarray
    member_indices: np.ndarray
    center2: np.ndarray | None = None

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())


def _select(order_key_primary: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Stable pick of the n best members: smallest key first, ties by index."""
    order = np.lexsort((idx, order_key_primary))
    return order[:n]


def build_patch(lc: LineCloud, x, eps: float, n: int,
                grid: SegmentGrid | None = None) -> LinePatch:
    """Assemble the single-point line patch G(x).

    Collects all segments within eps (infinite-line distance), keeps the n
    closest when over-full, and encodes each as [p - x, q - x, distance].
    An empty patch (valid_count 0) is returned as-is; callers decide.
    """
    if eps < 0:
        raise GeometryError(f"patch radius must be >= 0, got {eps}")
    if n < 1:
        raise GeometryError(f"patch capacity must be >= 1, got {n}")
    x = as_vec3(x)
    if grid is not None:
        idx, dist = grid.query(x, eps)
    else:
        idx, dist = scan_members(lc, x, eps)
    pick = _select(dist, idx, n)
    idx, dist = idx[pick], dist[pick]

    feats = np.zeros((n, SINGLE_FEATURE_WIDTH))
    mask = np.zeros(n, dtype=bool)
    m = len(idx)
    if m:
        segs = lc.array[idx]
        feats[:m, 0:3] = segs[:, 0] - x
        feats[:m, 3:6] = segs[:, 1] - x
        feats[:m, 6] = dist
        mask[:m] = True
    return LinePatch(center=x, features=feats, mask=mask, member_indices=idx)


def build_pair_patch(lc: LineCloud, x, y, eps: float, n_pair: int,
                     grid: SegmentGrid | None = None) -> LinePatch:
    """Assemble the pair patch G(x, y) = G(x) union G(y).

    Feature rows are [p - m, q - m, dist_x, dist_y, source] with m the pair
    midpoint and source -1 / +1 / 0 for members found only around x, only
    around y, or around both. Over-full patches keep the smallest
    min(dist_x, dist_y).
    """
    x, y = as_vec3(x), as_vec3(y)
    if np.array_equal(x, y):
        raise GeometryError("pair patch needs two distinct query points")
    if grid is not None:
        ix, _ = grid.query(x, eps)
        iy, _ = grid.query(y, eps)
    else:
        ix, _ = scan_members(lc, x, eps)
        iy, _ = scan_members(lc, y, eps)
    set_x, set_y = set(ix.tolist()), set(iy.tolist())
    union = np.asarray(sorted(set_x | set_y), dtype=np.int64)

    feats = np.zeros((n_pair, PAIR_FEATURE_WIDTH))
    mask = np.zeros(n_pair, dtype=bool)
    if len(union) == 0:
        return LinePatch(center=x, center2=y, features=feats, mask=mask,
                         member_indices=union)

    starts, units = _line_geometry(lc)
    dx = _distances_to_lines(x, starts[union], units[union])
    dy = _distances_to_lines(y, starts[union], units[union])
    flags = np.array([0.0 if (i in set_x and i in set_y) else (-1.0 if i in set_x else 1.0)
                      for i in union.tolist()])
    pick = _select(np.minimum(dx, dy), union, n_pair)
    union, dx, dy, flags = union[pick], dx[pick], dy[pick], flags[pick]

    mid = (x + y) / 2.0
    m = len(union)
    segs = lc.array[union]
    feats[:m, 0:3] = segs[:, 0] - mid
    feats[:m, 3:6] = segs[:, 1] - mid
    feats[:m, 6] = dx
    feats[:m, 7] = dy
    feats[:m, 8] = flags
    mask[:m] = True
    return LinePatch(center=x, center2=y, features=feats, mask=mask, member_indices=union)


@dataclass
class PatchBatch:
    """G stacked patches with identical row count and feature width."""

    features: np.ndarray          # (G, N, F)
    mask: np.ndarray              # (G, N)
    centers: np.ndarray           # (G, 3)
    provenance: np.ndarray        # (G,) caller-defined sample indices
    centers2: np.ndarray | None = None

    @classmethod
    def from_patches(cls, patches: list[LinePatch], provenance=None) -> "PatchBatch":
        if not patches:
            raise GeometryError("cannot batch zero patches")
        n = patches[0].features.shape[0]
        f = patches[0].features.shape[1]
        for p in patches:
            if p.features.shape != (n, f):
                raise GeometryError("patches in a batch must share N and feature width")
        feats = np.stack([p.features for p in patches])
        mask = np.stack([p.mask for p in patches])
        centers = np.stack([p.center for p in patches])
        centers2 = None
        if patches[0].center2 is not None:
            centers2 = np.stack([p.center2 for p in patches])
        if provenance is None:
            provenance = np.arange(len(patches), dtype=np.int64)
        return cls(features=feats, mask=mask, centers=centers,
                   provenance=np.asarray(provenance, dtype=np.int64), centers2=centers2)

    @property
    def size(self) -> int:
        return self.features.shape[0]
