"""Training supervision: GT wireframe extraction from meshes, line labeling,
patch labels, junction targets, and junction-pair classes."""

from __future__ import annotations

import enum

import numpy as np

from .geometry import (
    Camera,
    GeometryError,
    LabelArray,
    LineCloud,
    Wireframe,
    graph_distance,
    validate_wireframe,
)
from .io import Mesh
from .patches import LinePatch


class LabelingError(ValueError):
    """Raised when supervision cannot be derived from the given inputs."""


class PairClass(enum.IntEnum):
    """Five-way junction-pair label; FP dominates all graph-distance classes."""

    FP = 0    # at least one point is a false-positive junction
    D0 = 1    # both map to the same GT junction
    D1 = 2    # directly connected
    D2 = 3    # two hops apart
    FAR = 4   # graph distance beyond two, or disconnected


# ---------------------------------------------------------------------------
# mesh -> wireframe


def _newell_normal(verts: np.ndarray) -> np.ndarray:
    n = np.zeros(3)
    for i in range(len(verts)):
        a, b = verts[i], verts[(i + 1) % len(verts)]
        n[0] += (a[1] - b[1]) * (a[2] + b[2])
        n[1] += (a[2] - b[2]) * (a[0] + b[0])
        n[2] += (a[0] - b[0]) * (a[1] + b[1])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise LabelingError("degenerate face (zero-area or collinear vertices)")
    return n / norm


def mesh_to_wireframe(mesh: Mesh, dihedral_deg: float = 5.0) -> Wireframe:
    """Extract sharp edges from a polygon mesh as a wireframe.

    Keeps edges whose adjacent face planes differ by more than the dihedral
    threshold (boundary edges always kept), then merges collinear chains of
    kept edges so subdividing a flat region never changes the result.
    """
    if mesh.vertices.shape[0] == 0 or not mesh.faces:
        raise LabelingError("empty mesh")
    for f in mesh.faces:
        if len(f) < 3:
            raise LabelingError(f"face with fewer than 3 vertices: {f}")
        if max(f) >= mesh.vertices.shape[0] or min(f) < 0:
            raise LabelingError(f"face references missing vertex: {f}")

    normals = [_newell_normal(mesh.vertices[list(f)]) for f in mesh.faces]
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, face in enumerate(mesh.faces):
        for k in range(len(face)):
            a, b = face[k], face[(k + 1) % len(face)]
            key = (min(a, b), max(a, b))
            edge_faces.setdefault(key, []).append(fi)

    cos_thresh = np.cos(np.radians(dihedral_deg))
    kept = set()
    for (a, b), faces in sorted(edge_faces.items()):
        if len(faces) > 2:
            raise LabelingError(f"non-manifold edge ({a}, {b}) shared by {len(faces)} faces")
        if len(faces) == 1:
            kept.add((a, b))
            continue
        # plane angle: cos = |n1 . n2| is orientation-independent
        cos_angle = abs(float(np.dot(normals[faces[0]], normals[faces[1]])))
        if cos_angle < cos_thresh:
            kept.add((a, b))

    edges = _merge_collinear_chains(mesh.vertices, kept, cos_thresh)

    used = sorted({v for e in edges for v in e})
    remap = {old: new for new, old in enumerate(used)}
    verts = mesh.vertices[used]
    out = Wireframe(verts, np.asarray([(remap[a], remap[b]) for a, b in sorted(edges)],
                                      dtype=np.int64).reshape(-1, 2))
    violations = validate_wireframe(out)
    if violations:
        raise LabelingError(f"extracted wireframe is invalid: {violations[0]}")
    return out


def _merge_collinear_chains(verts: np.ndarray, edges: set, cos_thresh: float) -> set:
    """Repeatedly splice out degree-2 vertices whose two edges continue straight."""
    edges = set(edges)
    changed = True
    while changed:
        changed = False
        incident: dict[int, list[tuple[int, int]]] = {}
        for e in edges:
            incident.setdefault(e[0], []).append(e)
            incident.setdefault(e[1], []).append(e)
        for v in sorted(incident):
            inc = incident[v]
            if len(inc) != 2:
                continue
            e1, e2 = inc
            a = e1[0] if e1[1] == v else e1[1]
            b = e2[0] if e2[1] == v else e2[1]
            if a == b:
                continue
            u = verts[v] - verts[a]
            w = verts[b] - verts[v]
            nu, nw = np.linalg.norm(u), np.linalg.norm(w)
            if nu < 1e-12 or nw < 1e-12:
                continue
            if float(np.dot(u, w)) / (nu * nw) >= cos_thresh:
                merged = (min(a, b), max(a, b))
                if merged in edges:
                    continue
                edges.discard(e1)
                edges.discard(e2)
                edges.add(merged)
                changed = True
                break
    return edges


# ---------------------------------------------------------------------------
# line cloud labeling


def _edge_frames(wf: Wireframe):
    va = wf.vertices[wf.edges[:, 0]]
    vb = wf.vertices[wf.edges[:, 1]]
    axis = vb - va
    length = np.linalg.norm(axis, axis=1)
    return va, vb, axis / length[:, None], length


def _candidate_edges_3d(segs: np.ndarray, wf: Wireframe, tau_3d: float):
    """Per-segment best GT edge under the 3D proximity test, or -1.

    A segment matches an edge when both its endpoints lie within tau_3d of the
    edge's infinite line and its axial extent overlaps the edge's extent; among
    matches the edge minimizing the larger endpoint distance wins.
    """
    n = segs.shape[0]
    va, vb, u, length = _edge_frames(wf)
    best_edge = np.full(n, -1, dtype=np.int64)
    best_cost = np.full(n, np.inf)
    p, q = segs[:, 0], segs[:, 1]
    for e in range(wf.n_edges):
        rel_p, rel_q = p - va[e], q - va[e]
        dp = np.linalg.norm(np.cross(rel_p, u[e]), axis=1)
        dq = np.linalg.norm(np.cross(rel_q, u[e]), axis=1)
        sp, sq = rel_p @ u[e], rel_q @ u[e]
        s0, s1 = np.minimum(sp, sq), np.maximum(sp, sq)
        overlap = np.minimum(s1, length[e]) >= np.maximum(s0, 0.0)
        ok = (dp <= tau_3d) & (dq <= tau_3d) & overlap
        cost = np.maximum(dp, dq)
        better = ok & (cost < best_cost)
        best_edge[better] = e
        best_cost[better] = cost[better]
    return best_edge


def _segment_to_point_distance(seg: np.ndarray, point: np.ndarray) -> float:
    """Distance from a junction to the nearest point on the segment."""
    p, q = seg
    d = q - p
    t = float(np.dot(point - p, d) / np.dot(d, d))
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(point - (p + t * d)))


def _point_to_segment_2d(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    d = b - a
    denom = float(np.dot(d, d))
    if denom < 1e-18:
        return float(np.linalg.norm(x - a))
    t = min(1.0, max(0.0, float(np.dot(x - a, d)) / denom))
    return float(np.linalg.norm(x - (a + t * d)))


def _candidate_edges_2d(lc: LineCloud, wf: Wireframe, cameras: list[Camera], tau_2d: float):
    """Per-segment agreed GT edge under the 2D support test, or -1.

    A segment is positive only if every one of its 2D supports lies within
    tau_2d of some projected GT edge and all supports agree on one edge.
    Segments without supports stay negative. Ties among agreed edges resolve
    by 3D proximity.
    """
    if lc.supports is None:
        raise LabelingError("2D labeling requires per-segment Support2D records")
    n_views = len(cameras)
    proj_a = np.zeros((n_views, wf.n_edges, 2))
    proj_b = np.zeros((n_views, wf.n_edges, 2))
    proj_ok = np.zeros((n_views, wf.n_edges), dtype=bool)
    for v, cam in enumerate(cameras):
        pa, da = cam.project(wf.vertices[wf.edges[:, 0]])
        pb, db = cam.project(wf.vertices[wf.edges[:, 1]])
        proj_a[v], proj_b[v] = pa, pb
        proj_ok[v] = (da > 1e-9) & (db > 1e-9)

    va, vb, u, _ = _edge_frames(wf)
    best = np.full(len(lc), -1, dtype=np.int64)
    for i in range(len(lc)):
        sups = lc.supports[i]
        if not sups:
            continue
        agreed: set | None = None
        for s in sups:
            if not (0 <= s.view < n_views):
                raise LabelingError(f"segment {i}: support references unknown view {s.view}")
            matched = set()
            for e in range(wf.n_edges):
                if not proj_ok[s.view, e]:
                    continue
                if (_point_to_segment_2d(s.a, proj_a[s.view, e], proj_b[s.view, e]) <= tau_2d
                        and _point_to_segment_2d(s.b, proj_a[s.view, e], proj_b[s.view, e]) <= tau_2d):
                    matched.add(e)
            agreed = matched if agreed is None else (agreed & matched)
            if not agreed:
                break
        if not agreed:
            continue
        # disambiguate by 3D closeness to the segment endpoints
        p, q = lc.array[i]
        costs = []
        for e in sorted(agreed):
            dp = float(np.linalg.norm(np.cross(p - va[e], u[e])))
            dq = float(np.linalg.norm(np.cross(q - va[e], u[e])))
            costs.append((max(dp, dq), e))
        best[i] = min(costs)[1]
    return best


def label_line_cloud(lc: LineCloud, wf_gt: Wireframe, cameras: list[Camera] | None = None,
                     tau_2d: float = 3.0, tau_3d: float = 0.05) -> LineCloud:
    """Label every segment with the 5-field supervision record.

    With cameras the 2D-projection test decides positives (supports required);
    without cameras the 3D fallback compares segments against GT edge lines
    directly. For positives, (i1, i2) are the owning edge's junctions ordered
    so that d1 <= d2, with distances measured from the segment's nearest point.
    """
    if wf_gt.n_edges == 0:
        raise LabelingError("GT wireframe has no edges")
    if cameras is not None:
        best = _candidate_edges_2d(lc, wf_gt, cameras, tau_2d)
    else:
        best = _candidate_edges_3d(lc.array, wf_gt, tau_3d)

    f = np.zeros(len(lc), dtype=np.int8)
    i1 = np.full(len(lc), -1, dtype=np.int64)
    i2 = np.full(len(lc), -1, dtype=np.int64)
    d1 = np.zeros(len(lc))
    d2 = np.zeros(len(lc))
    for i in range(len(lc)):
        e = int(best[i])
        if e < 0:
            continue
        a, b = int(wf_gt.edges[e, 0]), int(wf_gt.edges[e, 1])
        da = _segment_to_point_distance(lc.array[i], wf_gt.vertices[a])
        db = _segment_to_point_distance(lc.array[i], wf_gt.vertices[b])
        if (db, b) < (da, a):
            a, b, da, db = b, a, db, da
        f[i], i1[i], d1[i], i2[i], d2[i] = 1, a, da, b, db
    return lc.with_labels(LabelArray(f, i1, d1, i2, d2))


# ---------------------------------------------------------------------------
# patch and pair supervision


def label_patch(patch: LinePatch, lc: LineCloud) -> bool:
    """True for a positive patch: at most half of its members are noise.

    Empty patches are negative.
    """
    if lc.labels is None:
        raise LabelingError("patch labeling needs a labeled cloud")
    valid = patch.valid_count
    if valid == 0:
        return False
    noise = int(np.sum(lc.labels.f[patch.member_indices] == 0))
    return not (noise > valid / 2)


def junction_target(patch: LinePatch, wf_gt: Wireframe, lc: LineCloud) -> np.ndarray:
    """GT junction owning a positive patch.

    Members vote for their labeled junctions with weight 1 / (1 + distance);
    ties go to the junction nearest the patch center.
    """
    if lc.labels is None:
        raise LabelingError("junction target needs a labeled cloud")
    lab = lc.labels
    members = [int(i) for i in patch.member_indices if lab.f[i] == 1]
    if not members:
        raise LabelingError("positive patch has no labeled member")
    weights: dict[int, float] = {}
    for i in members:
        weights[int(lab.i1[i])] = weights.get(int(lab.i1[i]), 0.0) + 1.0 / (1.0 + float(lab.d1[i]))
        weights[int(lab.i2[i])] = weights.get(int(lab.i2[i]), 0.0) + 1.0 / (1.0 + float(lab.d2[i]))
    top = max(weights.values())
    tied = sorted(j for j, w in weights.items() if w >= top - 1e-12 * max(1.0, top))
    if len(tied) > 1:
        dists = [float(np.linalg.norm(wf_gt.vertices[j] - patch.center)) for j in tied]
        winner = tied[int(np.argmin(dists))]
    else:
        winner = tied[0]
    return wf_gt.vertices[winner].copy()


def nearest_junction(wf: Wireframe, p) -> tuple[int, float]:
    if wf.n_vertices == 0:
        raise LabelingError("wireframe has no vertices")
    d = np.linalg.norm(wf.vertices - np.asarray(p, dtype=np.float64), axis=1)
    idx = int(np.argmin(d))
    return idx, float(d[idx])


def pair_class(p, q, wf_gt: Wireframe, eps_fp: float, cap: int = 2) -> PairClass:
    """Five-way label for a junction pair.

    FP when either point is farther than eps_fp from every GT junction;
    otherwise the graph distance between the nearest junctions decides.
    """
    if wf_gt.n_vertices == 0:
        raise LabelingError("empty GT wireframe")
    ip, dp = nearest_junction(wf_gt, p)
    iq, dq = nearest_junction(wf_gt, q)
    if dp > eps_fp or dq > eps_fp:
        return PairClass.FP
    d = graph_distance(wf_gt, ip, iq, cap=cap)
    if d == 0:
        return PairClass.D0
    if d == 1:
        return PairClass.D1
    if d == 2:
        return PairClass.D2
    return PairClass.FAR
