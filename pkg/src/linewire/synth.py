"""Parametric synthetic scenes: building wireframes plus emulated line clouds.

Roof families (box, gabled, hipped, L-shaped prism) are built as polygon
meshes; the GT wireframe comes from the sharp-edge extractor so the whole
generation path exercises the same code as external meshes. The line cloud
mimics multi-view extraction output: edges fragment into short jittered
pieces, some pieces get slightly-off-line duplicates, and clutter segments
appear on faces and in free space. Every segment carries provenance (GT edge
index, or -1 for clutter).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .geometry import Camera, GeometryError, LineCloud, Wireframe
from .io import (
    Mesh,
    read_cameras,
    read_line_cloud,
    read_supports,
    read_wireframe,
    write_cameras,
    write_line_cloud,
    write_supports,
    write_wireframe,
)
from .labeling import mesh_to_wireframe
from .patches import LinePatch, PatchBatch, SegmentGrid, build_patch, sample_query_points

FAMILIES = ("box", "gabled", "hipped", "lshape")


@dataclass
class SceneSpec:
    """Generation parameters for one family of synthetic buildings."""

    family: str = "mixed"                   # one of FAMILIES or "mixed"
    width_range: tuple = (4.0, 10.0)
    depth_range: tuple = (4.0, 8.0)
    height_range: tuple = (2.5, 5.0)
    roof_height_range: tuple = (1.0, 3.0)
    noise_sigma: float = 0.0                # endpoint jitter, fraction of the wireframe diagonal
    clutter_ratio: float = 0.0              # clutter count relative to structural count
    frag_min: int = 2
    frag_max: int = 8
    duplicate_prob: float = 0.25
    face_clutter_fraction: float = 0.5
    with_cameras: bool = False
    n_views: int = 8

    def validate(self) -> None:
        if self.family not in FAMILIES + ("mixed",):
            raise GeometryError(f"unknown family {self.family!r}")
        for name in ("width_range", "depth_range", "height_range", "roof_height_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise GeometryError(f"invalid {name}: ({lo}, {hi})")
        if self.noise_sigma < 0:
            raise GeometryError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.clutter_ratio < 0:
            raise GeometryError(f"clutter_ratio must be >= 0, got {self.clutter_ratio}")
        if not (1 <= self.frag_min <= self.frag_max):
            raise GeometryError(f"invalid fragmentation range ({self.frag_min}, {self.frag_max})")
        if not (0 <= self.duplicate_prob <= 1):
            raise GeometryError(f"duplicate_prob must be in [0, 1], got {self.duplicate_prob}")
        if not (0 <= self.face_clutter_fraction <= 1):
            raise GeometryError("face_clutter_fraction must be in [0, 1]")
        if self.with_cameras and self.n_views < 2:
            raise GeometryError("need at least 2 views")


@dataclass
class SyntheticScene:
    wireframe: Wireframe
    cloud: LineCloud
    provenance: np.ndarray          # (n,) GT edge index per segment, -1 for clutter
    spec: SceneSpec
    seed: int
    cameras: list[Camera] | None = None


# ---------------------------------------------------------------------------
# building meshes


def _box_mesh(w: float, d: float, h: float, z0: float = 0.0) -> Mesh:
    v = np.array([
        [0, 0, z0], [w, 0, z0], [w, d, z0], [0, d, z0],
        [0, 0, z0 + h], [w, 0, z0 + h], [w, d, z0 + h], [0, d, z0 + h],
    ], dtype=np.float64)
    faces = [
        (3, 2, 1, 0),          # bottom
        (4, 5, 6, 7),          # top
        (0, 1, 5, 4),          # y = 0 wall
        (2, 3, 7, 6),          # y = d wall
        (1, 2, 6, 5),          # x = w wall
        (3, 0, 4, 7),          # x = 0 wall
    ]
    return Mesh(v, faces)


def _gabled_mesh(w: float, d: float, h: float, rh: float) -> Mesh:
    v = np.array([
        [0, 0, 0], [w, 0, 0], [w, d, 0], [0, d, 0],
        [0, 0, h], [w, 0, h], [w, d, h], [0, d, h],
        [0, d / 2, h + rh], [w, d / 2, h + rh],      # ridge ends
    ], dtype=np.float64)
    faces = [
        (3, 2, 1, 0),              # bottom
        (0, 1, 5, 4),              # y = 0 wall
        (2, 3, 7, 6),              # y = d wall
        (1, 2, 6, 9, 5),           # x = w gable wall
        (3, 0, 4, 8, 7),           # x = 0 gable wall
        (4, 5, 9, 8),              # roof, y = 0 side
        (6, 7, 8, 9),              # roof, y = d side
    ]
    return Mesh(v, faces)


def _hipped_mesh(w: float, d: float, h: float, rh: float, inset: float) -> Mesh:
    v = np.array([
        [0, 0, 0], [w, 0, 0], [w, d, 0], [0, d, 0],
        [0, 0, h], [w, 0, h], [w, d, h], [0, d, h],
        [inset, d / 2, h + rh], [w - inset, d / 2, h + rh],
    ], dtype=np.float64)
    faces = [
        (3, 2, 1, 0),
        (0, 1, 5, 4),
        (1, 2, 6, 5),
        (2, 3, 7, 6),
        (3, 0, 4, 7),
        (4, 5, 9, 8),              # roof, y = 0 side
        (6, 7, 8, 9),              # roof, y = d side
        (5, 6, 9),                 # hip, x = w end
        (7, 4, 8),                 # hip, x = 0 end
    ]
    return Mesh(v, faces)


def _lshape_mesh(w: float, d: float, w2: float, d2: float, h: float) -> Mesh:
    # prism over an L-shaped footprint with 6 corners
    foot = np.array([
        [0, 0], [w, 0], [w, d], [w2, d], [w2, d + d2], [0, d + d2],
    ], dtype=np.float64)
    bottom = np.c_[foot, np.zeros(6)]
    top = np.c_[foot, np.full(6, h)]
    v = np.vstack([bottom, top])
    faces = [tuple(range(5, -1, -1)), tuple(range(6, 12))]
    for i in range(6):
        j = (i + 1) % 6
        faces.append((i, j, j + 6, i + 6))
    return Mesh(v, faces)


def build_building_mesh(family: str, rng: np.random.Generator, spec: SceneSpec) -> Mesh:
    w = float(rng.uniform(*spec.width_range))
    d = float(rng.uniform(*spec.depth_range))
    h = float(rng.uniform(*spec.height_range))
    rh = float(rng.uniform(*spec.roof_height_range))
    if family == "box":
        return _box_mesh(w, d, h)
    if family == "gabled":
        return _gabled_mesh(w, d, h, rh)
    if family == "hipped":
        inset = float(rng.uniform(0.15, 0.4)) * w
        return _hipped_mesh(w, d, h, rh, inset)
    if family == "lshape":
        w2 = float(rng.uniform(0.35, 0.65)) * w
        d2 = float(rng.uniform(0.4, 0.9)) * d
        return _lshape_mesh(w, d, w2, d2, h)
    raise GeometryError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# cloud emission


def _point_in_polygon_2d(pt: np.ndarray, poly: np.ndarray) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if (a[1] > pt[1]) != (b[1] > pt[1]):
            t = (pt[1] - a[1]) / (b[1] - a[1])
            if pt[0] < a[0] + t * (b[0] - a[0]):
                inside = not inside
    return inside


def _face_frame(verts: np.ndarray):
    """2D orthonormal frame in the face plane plus the projected polygon."""
    origin = verts[0]
    u = verts[1] - verts[0]
    u = u / np.linalg.norm(u)
    normal = None
    for k in range(2, len(verts)):
        cand = np.cross(u, verts[k] - verts[0])
        if np.linalg.norm(cand) > 1e-9:
            normal = cand / np.linalg.norm(cand)
            break
    if normal is None:
        return None
    v = np.cross(normal, u)
    poly2 = np.stack([[(p - origin) @ u, (p - origin) @ v] for p in verts])
    return origin, u, v, poly2


def _sample_point_on_face(rng, frame):
    origin, u, v, poly2 = frame
    lo, hi = poly2.min(axis=0), poly2.max(axis=0)
    for _ in range(200):
        pt = rng.uniform(lo, hi)
        if _point_in_polygon_2d(pt, poly2):
            return origin + pt[0] * u + pt[1] * v
    return None


def _face_clutter_segment(rng, frames, areas) -> np.ndarray | None:
    probs = areas / areas.sum()
    fi = int(rng.choice(len(frames), p=probs))
    frame = frames[fi]
    if frame is None:
        return None
    a = _sample_point_on_face(rng, frame)
    b = _sample_point_on_face(rng, frame)
    if a is None or b is None or np.linalg.norm(b - a) < 1e-6:
        return None
    # texture lines are short: keep a random sub-chord
    t0 = rng.uniform(0.0, 0.6)
    t1 = t0 + rng.uniform(0.2, 0.4)
    p, q = a + t0 * (b - a), a + min(t1, 1.0) * (b - a)
    if np.linalg.norm(q - p) < 1e-6:
        return None
    return np.stack([p, q])


def _fragment_edges(wf: Wireframe, rng, spec: SceneSpec, sigma: float):
    segs, prov = [], []
    for e in range(wf.n_edges):
        va = wf.vertices[wf.edges[e, 0]]
        vb = wf.vertices[wf.edges[e, 1]]
        k = int(rng.integers(spec.frag_min, spec.frag_max + 1))
        cuts = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, size=k - 1)), [1.0]])
        for t0, t1 in zip(cuts[:-1], cuts[1:]):
            p = va + t0 * (vb - va)
            q = va + t1 * (vb - va)
            if sigma > 0:
                p = p + rng.normal(0.0, sigma, 3)
                q = q + rng.normal(0.0, sigma, 3)
            if np.linalg.norm(q - p) < 1e-9:
                continue
            segs.append(np.stack([p, q]))
            prov.append(e)
            if rng.uniform() < spec.duplicate_prob:
                off = rng.normal(0.0, sigma, 3) if sigma > 0 else np.zeros(3)
                segs.append(np.stack([p + off, q + off]))
                prov.append(e)
    return segs, prov


def _ring_cameras(wf: Wireframe, n_views: int) -> list[Camera]:
    center = wf.vertices.mean(axis=0)
    diag = max(wf.bbox_diagonal(), 1.0)
    radius = 2.5 * diag
    f, size = 900.0, 1024
    cams = []
    for v in range(n_views):
        ang = 2 * np.pi * v / n_views
        pos = center + np.array([radius * np.cos(ang), radius * np.sin(ang), 0.9 * diag])
        forward = center - pos
        forward = forward / np.linalg.norm(forward)
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        r = np.stack([right, down, forward])
        if np.linalg.det(r) < 0:
            r = np.stack([right, -down, forward])
        k = np.array([[f, 0, size / 2], [0, f, size / 2], [0, 0, 1.0]])
        cams.append(Camera(k, r, pos @ r.T * -1.0, size, size))
    return cams


def _make_supports(cloud: LineCloud, cameras: list[Camera], rng) -> list[list]:
    from .geometry import Support2D

    supports = [[] for _ in range(len(cloud))]
    n_views = len(cameras)
    for i in range(len(cloud)):
        order = rng.permutation(n_views)
        for v in order:
            cam = cameras[int(v)]
            px, depths = cam.project(cloud.array[i])
            if depths.min() <= 1e-6:
                continue
            if np.linalg.norm(px[0] - px[1]) < 1e-6:
                continue
            supports[i].append(Support2D(int(v), px[0], px[1]))
            if len(supports[i]) >= 3:
                break
    return supports


def generate_synthetic_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    """Build one deterministic scene: GT wireframe plus emulated line cloud."""
    spec.validate()
    rng = np.random.default_rng(seed)
    family = spec.family
    if family == "mixed":
        family = FAMILIES[int(rng.integers(len(FAMILIES)))]
    mesh = build_building_mesh(family, rng, spec)
    wf = mesh_to_wireframe(mesh)
    sigma = spec.noise_sigma * wf.bbox_diagonal()

    segs, prov = _fragment_edges(wf, rng, spec, sigma)
    n_structural = len(segs)

    n_clutter = int(round(spec.clutter_ratio * n_structural))
    if n_clutter:
        frames, areas = [], []
        for face in mesh.faces:
            verts = mesh.vertices[list(face)]
            frames.append(_face_frame(verts))
            # polygon area via the cross-product shoelace in 3D
            area = 0.5 * np.linalg.norm(sum(np.cross(verts[i], verts[(i + 1) % len(verts)])
                                            for i in range(len(verts))))
            areas.append(max(area, 1e-9))
        areas = np.asarray(areas)
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        pad = 0.15 * (hi - lo)
        diag = float(np.linalg.norm(hi - lo))
        made = 0
        while made < n_clutter:
            if rng.uniform() < spec.face_clutter_fraction:
                seg = _face_clutter_segment(rng, frames, areas)
                if seg is None:
                    continue
            else:
                p = rng.uniform(lo - pad, hi + pad)
                d = rng.normal(size=3)
                d /= np.linalg.norm(d)
                seg = np.stack([p, p + d * rng.uniform(0.05, 0.2) * diag])
            segs.append(seg)
            prov.append(-1)
            made += 1

    order = rng.permutation(len(segs))
    cloud = LineCloud(np.stack([segs[i] for i in order]))
    provenance = np.asarray([prov[i] for i in order], dtype=np.int64)

    cameras = None
    if spec.with_cameras:
        cameras = _ring_cameras(wf, spec.n_views)
        supports = _make_supports(cloud, cameras, rng)
        cloud = LineCloud(cloud.array, supports=supports)
    return SyntheticScene(wireframe=wf, cloud=cloud, provenance=provenance,
                          spec=spec, seed=seed, cameras=cameras)


# ---------------------------------------------------------------------------
# training query sampling


@dataclass
class TrainingQueries:
    """Query points for junction training with per-patch supervision."""

    points: np.ndarray            # (g, 3)
    patches: list[LinePatch]
    positive: np.ndarray          # (g,) bool
    targets: np.ndarray           # (g, 3), zero rows for negative patches


def sample_training_queries(lc: LineCloud, wf_gt: Wireframe, g: int, eps: float,
                            n_lines: int, seed: int, junction_fraction: float = 0.5,
                            density_fraction: float = 0.25,
                            grid: SegmentGrid | None = None) -> TrainingQueries:
    """Draw junction-training queries and label their patches.

    A configured fraction of queries are GT junctions perturbed by
    N(0, (eps/2)^2); the rest come from density + farthest point sampling.
    Patch labels and regression targets come from the labeled cloud.
    """
    from .labeling import junction_target, label_patch

    if lc.labels is None:
        raise GeometryError("training queries need a labeled cloud")
    rng = np.random.default_rng(seed)
    n_junction = int(round(junction_fraction * g))
    pts = []
    for _ in range(n_junction):
        j = int(rng.integers(wf_gt.n_vertices))
        pts.append(wf_gt.vertices[j] + rng.normal(0.0, eps / 2.0, 3))
    n_rest = g - n_junction
    if n_rest > 0:
        qp = sample_query_points(lc, n_rest, density_fraction=density_fraction,
                                 seed=int(rng.integers(2 ** 31)), eps=eps)
        rest = qp.points
        if len(rest) < n_rest:  # tiny cloud: repeat to keep the batch shape fixed
            reps = int(np.ceil(n_rest / max(len(rest), 1)))
            rest = np.tile(rest, (reps, 1))[:n_rest]
        pts.extend(rest[:n_rest])
    points = np.asarray(pts).reshape(g, 3)

    patches, positive, targets = [], np.zeros(g, dtype=bool), np.zeros((g, 3))
    for i in range(g):
        patch = build_patch(lc, points[i], eps, n_lines, grid=grid)
        patches.append(patch)
        pos = label_patch(patch, lc)
        positive[i] = pos
        if pos:
            targets[i] = junction_target(patch, wf_gt, lc)
    return TrainingQueries(points=points, patches=patches, positive=positive, targets=targets)


# ---------------------------------------------------------------------------
# scene directories


def write_scene(scene: SyntheticScene, labeled: LineCloud, out_dir) -> None:
    """Persist a scene: GT wireframe, labeled cloud, provenance, and metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_wireframe(scene.wireframe, out / "gt.obj")
    write_line_cloud(labeled, out / "cloud.txt")
    (out / "provenance.json").write_text(
        json.dumps({"edge_index": scene.provenance.tolist()}) + "\n")
    meta = {"seed": scene.seed, "spec": asdict(scene.spec), "n_segments": len(scene.cloud)}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    if scene.cameras is not None:
        write_cameras(scene.cameras, out / "cameras.json")
        if scene.cloud.supports is not None:
            write_supports(scene.cloud.supports, out / "supports.json")


@dataclass
class SceneBundle:
    cloud: LineCloud
    wireframe: Wireframe
    provenance: np.ndarray | None = None
    cameras: list[Camera] | None = None


def read_scene(scene_dir) -> SceneBundle:
    d = Path(scene_dir)
    cloud = read_line_cloud(d / "cloud.txt")
    wf = read_wireframe(d / "gt.obj")
    prov = None
    if (d / "provenance.json").exists():
        prov = np.asarray(json.loads((d / "provenance.json").read_text())["edge_index"],
                          dtype=np.int64)
    cameras = None
    if (d / "cameras.json").exists():
        cameras = read_cameras(d / "cameras.json")
        if (d / "supports.json").exists():
            supports = read_supports(d / "supports.json", len(cloud))
            cloud = LineCloud(cloud.array, labels=cloud.labels, supports=supports)
    return SceneBundle(cloud=cloud, wireframe=wf, provenance=prov, cameras=cameras)
