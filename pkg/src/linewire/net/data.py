"""Training batch assembly from labeled scenes.

Scenes are normalized (cloud bounding-box diagonal 1) before patches are
built, so every threshold here is in normalized units. Label distances are
rescaled by the same transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import GeometryError, LineCloud, NormalizeTransform, Wireframe, normalize_cloud
from ..labeling import pair_class
from ..patches import PatchBatch, SegmentGrid, build_pair_patch
from ..synth import sample_training_queries


@dataclass
class PreparedScene:
    """Normalized labeled cloud with its GT wireframe and spatial index."""

    cloud: LineCloud
    wireframe: Wireframe
    grid: SegmentGrid
    transform: NormalizeTransform


def prepare_scene(cloud: LineCloud, wf_gt: Wireframe, eps: float) -> PreparedScene:
    if cloud.labels is None:
        raise GeometryError("training scenes need labeled clouds")
    norm_cloud, tf = normalize_cloud(cloud)
    norm_wf = tf.apply_wireframe(wf_gt)
    grid = SegmentGrid(norm_cloud, eps)
    return PreparedScene(cloud=norm_cloud, wireframe=norm_wf, grid=grid, transform=tf)


@dataclass
class JunctionBatch:
    batch: PatchBatch
    clf_targets: np.ndarray       # (g,) 0 = no junction, 1 = junction
    offset_targets: np.ndarray    # (g, 3) target - center, zero for negatives
    offset_mask: np.ndarray       # (g,) bool


def junction_batch(ps: PreparedScene, g: int, eps: float, n_lines: int, seed: int,
                   junction_fraction: float = 0.5,
                   density_fraction: float = 0.25) -> JunctionBatch:
    tq = sample_training_queries(ps.cloud, ps.wireframe, g, eps, n_lines, seed,
                                 junction_fraction=junction_fraction,
                                 density_fraction=density_fraction, grid=ps.grid)
    batch = PatchBatch.from_patches(tq.patches)
    offsets = np.where(tq.positive[:, None], tq.targets - tq.points, 0.0)
    return JunctionBatch(batch=batch,
                         clf_targets=tq.positive.astype(np.int64),
                         offset_targets=offsets,
                         offset_mask=tq.positive.copy())


@dataclass
class PairBatch:
    batch: PatchBatch
    targets: np.ndarray           # (g,) PairClass values


def _class_candidates(wf: Wireframe):
    """Vertex pairs grouped by graph distance (1, 2, beyond)."""
    from ..geometry import graph_distance

    d1 = [tuple(int(v) for v in e) for e in wf.edges]
    d2, far = [], []
    for a in range(wf.n_vertices):
        for b in range(a + 1, wf.n_vertices):
            d = graph_distance(wf, a, b, cap=2)
            if d == 2:
                d2.append((a, b))
            elif d is None:
                far.append((a, b))
    return d1, d2, far


def _sample_fp_point(rng, lo, hi, wf, eps_fp, tries: int = 200):
    """A point farther than eps_fp from every GT junction.

    Half the draws lie on GT edges: they mimic the ghost junctions the
    regressor produces mid-edge, which the connectivity classifier must learn
    to reject. The rest are free-space points.
    """
    for _ in range(tries):
        if wf.n_edges and rng.uniform() < 0.5:
            e = int(rng.integers(wf.n_edges))
            va = wf.vertices[wf.edges[e, 0]]
            vb = wf.vertices[wf.edges[e, 1]]
            p = va + rng.uniform(0.15, 0.85) * (vb - va)
        else:
            p = rng.uniform(lo, hi)
        if np.min(np.linalg.norm(wf.vertices - p, axis=1)) > eps_fp:
            return p
    return None


def pair_batch(ps: PreparedScene, g: int, eps: float, n_pair: int, eps_fp: float,
               seed: int, perturb_sigma: float | None = None) -> PairBatch:
    """Sample g junction pairs with a roughly balanced class mix.

    Candidate pairs come from perturbed GT junctions at graph distances
    0/1/2/beyond plus synthetic false-positive points; the authoritative label
    is computed by the pair classifier's own rule afterwards.
    """
    rng = np.random.default_rng(seed)
    wf = ps.wireframe
    if perturb_sigma is None:
        perturb_sigma = min(eps / 2.0, eps_fp / 3.0)
    d1, d2, far = _class_candidates(wf)
    pts = ps.cloud.endpoints
    lo, hi = pts.min(axis=0), pts.max(axis=0)

    quotas = {"fp": 0.20, "d0": 0.20, "d1": 0.25, "d2": 0.20, "far": 0.15}
    counts = {k: int(round(v * g)) for k, v in quotas.items()}
    counts["d1"] += g - sum(counts.values())
    if not d2:
        counts["d1"] += counts.pop("d2")
    if not far:
        counts["d1"] += counts.pop("far", 0)

    def perturb(v):
        return wf.vertices[v] + rng.normal(0.0, perturb_sigma, 3)

    pairs = []
    for kind, count in counts.items():
        for _ in range(count):
            if kind == "fp":
                p = _sample_fp_point(rng, lo, hi, wf, eps_fp)
                if p is None:
                    p = perturb(int(rng.integers(wf.n_vertices)))  # degenerate bbox fallback
                if rng.uniform() < 0.5:
                    q = perturb(int(rng.integers(wf.n_vertices)))
                else:
                    q = _sample_fp_point(rng, lo, hi, wf, eps_fp)
                    if q is None:
                        q = perturb(int(rng.integers(wf.n_vertices)))
            elif kind == "d0":
                j = int(rng.integers(wf.n_vertices))
                p, q = perturb(j), perturb(j)
            else:
                pool = {"d1": d1, "d2": d2, "far": far}[kind]
                a, b = pool[int(rng.integers(len(pool)))]
                p, q = perturb(a), perturb(b)
            if np.array_equal(p, q):
                q = q + perturb_sigma * 1e-3 + 1e-9
            pairs.append((p, q))

    patches, targets = [], []
    for p, q in pairs[:g]:
        patches.append(build_pair_patch(ps.cloud, p, q, eps, n_pair, grid=ps.grid))
        targets.append(int(pair_class(p, q, wf, eps_fp)))
    return PairBatch(batch=PatchBatch.from_patches(patches),
                     targets=np.asarray(targets, dtype=np.int64))
