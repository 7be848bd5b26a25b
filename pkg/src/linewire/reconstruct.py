"""Inference orchestration: junction prediction, pair selection, connectivity
classification, and post-processing into a final wireframe.

A training-free heuristic baseline (direction clustering + least-squares
intersection) makes the pipeline usable without weights and sanity-checks the
plumbing; it is not a substitute for the learned models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    GeometryError,
    LineCloud,
    Wireframe,
    normalize_cloud,
    validate_wireframe,
)
from .labeling import PairClass
from .net.model import LptModel, connectivity_head, junction_heads, softmax
from .patches import (
    PatchBatch,
    SegmentGrid,
    build_pair_patch,
    build_patch,
    sample_query_points,
)


@dataclass(frozen=True)
class PredictedJunction:
    position: np.ndarray      # world units after de-normalization
    confidence: float
    query_index: int


@dataclass
class InferenceConfig:
    """Geometry and threshold knobs for the inference pipeline.

    Length-like values (eps, tau_nms, ...) are in normalized units (cloud
    bounding-box diagonal = 1) and get rescaled internally.
    """

    eps: float = 0.03
    g_queries: int = 256
    n_lines: int = 64
    n_pair_lines: int = 128
    density_fraction: float = 0.25
    tau_conf: float = 0.5
    tau_edge: float = 0.5
    tau_nms: float = 0.05
    adjacency_merge_factor: float = 2.0
    h_max: int = 1
    top_m: int = 64
    pair_budget: int = 128
    seed: int = 0
    heuristic_angle_deg: float = 15.0
    heuristic_coverage: float = 0.5


# ---------------------------------------------------------------------------
# learned pipeline


def _predict_junctions_normalized(model: LptModel, lc_norm: LineCloud, grid: SegmentGrid,
                                  cfg: InferenceConfig):
    qp = sample_query_points(lc_norm, cfg.g_queries, density_fraction=cfg.density_fraction,
                             seed=cfg.seed, eps=cfg.eps)
    patches = [build_patch(lc_norm, p, cfg.eps, cfg.n_lines, grid=grid) for p in qp.points]
    batch = PatchBatch.from_patches(patches)
    feats = model.forward(batch, training=False)
    logits, offsets = junction_heads(model, feats, training=False)
    conf = softmax(logits)[:, 1]
    positions = qp.points + offsets
    keep = conf >= cfg.tau_conf
    offset_norm = np.linalg.norm(offsets, axis=1)
    return positions[keep], conf[keep], np.nonzero(keep)[0], offset_norm[keep]


def predict_junctions(model: LptModel, lc: LineCloud, cfg: InferenceConfig) -> list[PredictedJunction]:
    """Sample query patches, run the junction heads, keep confident predictions."""
    if len(lc) == 0:
        return []
    lc_norm, tf = normalize_cloud(lc)
    grid = SegmentGrid(lc_norm, cfg.eps)
    pos, conf, qidx, _ = _predict_junctions_normalized(model, lc_norm, grid, cfg)
    world = tf.invert(pos)
    return [PredictedJunction(position=world[i], confidence=float(conf[i]),
                              query_index=int(qidx[i]))
            for i in range(len(conf))]


def select_pairs(confidences: np.ndarray, cfg: InferenceConfig) -> list[tuple[int, int]]:
    """Candidate pairs among the top-M most confident junctions.

    All unordered pairs of the kept junctions, ranked by confidence product
    (ties by index), truncated to the pair budget.
    """
    k = len(confidences)
    if k < 2:
        return []
    order = np.lexsort((np.arange(k), -np.asarray(confidences)))
    top = order[:cfg.top_m]
    scored = []
    for ai in range(len(top)):
        for bi in range(ai + 1, len(top)):
            i, j = int(top[ai]), int(top[bi])
            i, j = min(i, j), max(i, j)
            scored.append((-(confidences[i] * confidences[j]), i, j))
    scored.sort()
    return [(i, j) for _, i, j in scored[:cfg.pair_budget]]


def predict_connectivity(model: LptModel, lc: LineCloud, junctions: list[PredictedJunction],
                         pairs: list[tuple[int, int]], cfg: InferenceConfig) -> np.ndarray:
    """Per-pair class probabilities, rows ordered like `pairs`."""
    if not pairs:
        return np.zeros((0, 5))
    lc_norm, tf = normalize_cloud(lc)
    grid = SegmentGrid(lc_norm, cfg.eps)
    positions = tf.apply(np.stack([j.position for j in junctions]))
    return _predict_connectivity_normalized(model, lc_norm, grid, positions, pairs, cfg)


def _predict_connectivity_normalized(model, lc_norm, grid, positions, pairs, cfg) -> np.ndarray:
    patches = []
    for i, j in pairs:
        x, y = positions[i], positions[j]
        if np.array_equal(x, y):
            y = y + 1e-9
        patches.append(build_pair_patch(lc_norm, x, y, cfg.eps, cfg.n_pair_lines, grid=grid))
    batch = PatchBatch.from_patches(patches)
    feats = model.forward(batch, training=False)
    return softmax(connectivity_head(model, feats, training=False))


# ---------------------------------------------------------------------------
# post-processing


def nms_junctions(positions: np.ndarray, confidences: np.ndarray,
                  stability: np.ndarray, tau_nms: float) -> tuple[list[int], np.ndarray]:
    """Greedy non-maximum suppression over junctions.

    Ranking is descending quantized confidence with the stability value
    (smaller first) breaking ties. Returns the kept indices in acceptance
    order plus a remap array sending every junction to its survivor (the
    nearest kept junction within tau_nms, itself if kept).
    """
    n = len(positions)
    rank_conf = np.round(np.asarray(confidences, dtype=np.float64), 3)
    order = np.lexsort((np.arange(n), np.asarray(stability), -rank_conf))
    kept: list[int] = []
    remap = np.full(n, -1, dtype=np.int64)
    for idx in order:
        idx = int(idx)
        if kept:
            d = np.linalg.norm(positions[kept] - positions[idx], axis=1)
            near = int(np.argmin(d))
            if d[near] <= tau_nms:
                remap[idx] = kept[near]
                continue
        kept.append(idx)
        remap[idx] = idx
    return kept, remap


def postprocess(positions: np.ndarray, confidences: np.ndarray,
                pairs: list[tuple[int, int]], pair_probs: np.ndarray,
                tau_nms: float, tau_edge: float = 0.5, h_max: int = 1,
                adjacency_merge_factor: float = 2.0,
                stability: np.ndarray | None = None) -> tuple[Wireframe, dict]:
    """Turn raw junction/pair predictions into a clean wireframe.

    Stages, in order: vertex NMS (pairs re-route to the surviving junction),
    D1 edge instantiation gated by tau_edge, identity (D0) merge, adjacency
    merge for near vertices with near-identical adjacency rows, duplicate and
    self-loop cleanup, and removal of single-edge components. Degree-0
    vertices are dropped at the end. Thresholds are in the units of
    `positions`. Returns the wireframe and per-stage counts.

    `stability` (smaller is better, e.g. the regressed offset magnitude)
    breaks confidence ties: near-saturated classifiers rank queries that sat
    right on a junction above far-regressed ones.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    confidences = np.asarray(confidences, dtype=np.float64).reshape(-1)
    report = {"junctions_in": len(positions), "pairs_in": len(pairs)}
    if len(positions) == 0:
        report.update(junctions_after_nms=0, edges_instantiated=0, d0_merges=0,
                      adjacency_merges=0, edges_after_cleanup=0, isolated_edges_removed=0,
                      final_vertices=0, final_edges=0)
        return Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int)), report
    if stability is None:
        stability = np.zeros(len(positions))
    # confidence quantized to 1e-3 so the stability tie-break can engage
    rank_conf = np.round(confidences, 3)

    # (1) greedy NMS by descending confidence; suppressed junctions map to
    # the nearest surviving one within tau_nms
    kept, remap = nms_junctions(positions, confidences, stability, tau_nms)
    report["junctions_after_nms"] = len(kept)

    # (2) re-route pairs, dedupe by strongest D1 evidence, instantiate edges
    best_prob: dict[tuple[int, int], np.ndarray] = {}
    for (a, b), probs in zip(pairs, pair_probs):
        ra, rb = int(remap[a]), int(remap[b])
        if ra == rb:
            continue
        key = (min(ra, rb), max(ra, rb))
        if key not in best_prob or probs[PairClass.D1] > best_prob[key][PairClass.D1]:
            best_prob[key] = np.asarray(probs)
    edges = set()
    d0_pairs = []
    for key in sorted(best_prob):
        probs = best_prob[key]
        cls = int(np.argmax(probs))
        if cls == PairClass.D1 and probs[PairClass.D1] >= tau_edge:
            edges.add(key)
        elif cls == PairClass.D0:
            d0_pairs.append(key)
    report["edges_instantiated"] = len(edges)

    # (3) identity merge: the lower-confidence junction folds into the other
    alias = {i: i for i in kept}
    rank_key = lambda i: (-rank_conf[i], stability[i], i)

    def resolve(i):
        while alias[i] != i:
            alias[i] = alias[alias[i]]
            i = alias[i]
        return i

    d0_count = 0
    for a, b in d0_pairs:
        ra, rb = resolve(a), resolve(b)
        if ra == rb:
            continue
        winner, loser = (ra, rb) if rank_key(ra) <= rank_key(rb) else (rb, ra)
        alias[loser] = winner
        d0_count += 1
    report["d0_merges"] = d0_count
    edges = {tuple(sorted((resolve(a), resolve(b)))) for a, b in edges}
    edges = {e for e in edges if e[0] != e[1]}
    survivors = sorted({resolve(i) for i in kept})

    # (4) adjacency merge: near vertices with near-identical neighbor rows,
    # looped to a fixed point
    adj_radius = adjacency_merge_factor * tau_nms
    merged = True
    adj_count = 0
    while merged:
        merged = False
        adj: dict[int, set] = {v: set() for v in survivors}
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        for ai in range(len(survivors)):
            for bi in range(ai + 1, len(survivors)):
                u, v = survivors[ai], survivors[bi]
                if np.linalg.norm(positions[u] - positions[v]) >= adj_radius:
                    continue
                hamming = len((adj[u] ^ adj[v]) - {u, v})
                if hamming > h_max:
                    continue
                winner, loser = (u, v) if rank_key(u) <= rank_key(v) else (v, u)
                edges = {tuple(sorted((winner if x == loser else x, winner if y == loser else y)))
                         for x, y in edges}
                edges = {e for e in edges if e[0] != e[1]}
                survivors.remove(loser)
                adj_count += 1
                merged = True
                break
            if merged:
                break
    report["adjacency_merges"] = adj_count
    report["edges_after_cleanup"] = len(edges)

    # (6) drop single-edge connected components
    adj = {v: set() for v in survivors}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    isolated = {(a, b) for a, b in edges if len(adj[a]) == 1 and len(adj[b]) == 1}
    edges -= isolated
    report["isolated_edges_removed"] = len(isolated)

    # drop degree-0 vertices, reindex
    used = sorted({v for e in edges for v in e})
    index = {v: i for i, v in enumerate(used)}
    final_edges = sorted((index[a], index[b], a, b) for a, b in edges)
    edge_conf = []
    for _, _, a, b in final_edges:
        probs = best_prob.get((min(a, b), max(a, b)))
        edge_conf.append(float(np.clip(probs[PairClass.D1], 0.0, 1.0)) if probs is not None else 1.0)
    wf = Wireframe(
        positions[used] if used else np.zeros((0, 3)),
        np.asarray([(a, b) for a, b, _, _ in final_edges], dtype=np.int64).reshape(-1, 2),
        vertex_conf=np.clip(confidences[used], 0.0, 1.0) if used else None,
        edge_conf=np.asarray(edge_conf) if final_edges else None,
    )
    report["final_vertices"] = wf.n_vertices
    report["final_edges"] = wf.n_edges
    return wf, report


# ---------------------------------------------------------------------------
# heuristic baseline


def _cluster_directions(units: np.ndarray, angle_deg: float) -> list[int]:
    """Greedy undirected direction clustering; returns per-cluster member counts."""
    cos_thresh = np.cos(np.radians(angle_deg))
    reps: list[np.ndarray] = []
    counts: list[int] = []
    for u in units:
        placed = False
        for ci, rep in enumerate(reps):
            if abs(float(np.dot(u, rep))) >= cos_thresh:
                counts[ci] += 1
                placed = True
                break
        if not placed:
            reps.append(u)
            counts.append(1)
    return counts


def _least_squares_point(starts: np.ndarray, units: np.ndarray):
    """Point minimizing the summed squared distance to the infinite lines.

    Returns None when the normal system is rank deficient (parallel lines).
    """
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for p, u in zip(starts, units):
        proj = np.eye(3) - np.outer(u, u)
        a += proj
        b += proj @ p
    w, v = np.linalg.eigh(a)
    if w[0] < 1e-8 * max(w[-1], 1e-12):
        return None
    return v @ ((v.T @ b) / w)


def heuristic_junctions(lc: LineCloud, cfg: InferenceConfig) -> list[PredictedJunction]:
    """Training-free junction detector.

    Member-line directions are clustered at a fixed angular threshold; the
    confidence grows with the number of multi-member clusters (junctions sit
    on at least three planes) and the position is the least-squares point of
    the member lines.
    """
    if len(lc) == 0:
        return []
    lc_norm, tf = normalize_cloud(lc)
    grid = SegmentGrid(lc_norm, cfg.eps)
    qp = sample_query_points(lc_norm, cfg.g_queries, density_fraction=cfg.density_fraction,
                             seed=cfg.seed, eps=cfg.eps)
    arr = lc_norm.array
    out = []
    for qi, x in enumerate(qp.points):
        patch = build_patch(lc_norm, x, cfg.eps, cfg.n_lines, grid=grid)
        if patch.valid_count == 0:
            out.append(PredictedJunction(position=tf.invert(x), confidence=0.0, query_index=qi))
            continue
        idx = patch.member_indices
        d = arr[idx, 1] - arr[idx, 0]
        units = d / np.linalg.norm(d, axis=1, keepdims=True)
        counts = _cluster_directions(units, cfg.heuristic_angle_deg)
        strong = sum(1 for c in counts if c >= 2)
        conf = min(1.0, strong / 3.0)
        pos = _least_squares_point(arr[idx, 0], units)
        if pos is None:
            conf, pos = 0.0, x
        out.append(PredictedJunction(position=tf.invert(pos), confidence=conf, query_index=qi))
    return out


def _edge_coverage(lc_norm: LineCloud, x: np.ndarray, y: np.ndarray, tube: float) -> float:
    """Fraction of the candidate edge covered by roughly-collinear segments."""
    arr = lc_norm.array
    u = y - x
    length = float(np.linalg.norm(u))
    if length < 1e-12:
        return 0.0
    u = u / length
    dp = np.linalg.norm(np.cross(arr[:, 0] - x, u), axis=1)
    dq = np.linalg.norm(np.cross(arr[:, 1] - x, u), axis=1)
    near = (dp <= tube) & (dq <= tube)
    if not near.any():
        return 0.0
    sp = (arr[near, 0] - x) @ u
    sq = (arr[near, 1] - x) @ u
    lo = np.clip(np.minimum(sp, sq), 0.0, length)
    hi = np.clip(np.maximum(sp, sq), 0.0, length)
    intervals = sorted((float(a), float(b)) for a, b in zip(lo, hi) if b > a)
    covered, cur_lo, cur_hi = 0.0, None, None
    for a, b in intervals:
        if cur_hi is None or a > cur_hi:
            if cur_hi is not None:
                covered += cur_hi - cur_lo
            cur_lo, cur_hi = a, b
        else:
            cur_hi = max(cur_hi, b)
    if cur_hi is not None:
        covered += cur_hi - cur_lo
    return covered / length


def heuristic_wireframe(lc: LineCloud, cfg: InferenceConfig) -> tuple[Wireframe, dict]:
    """Full training-free baseline: heuristic junctions plus coverage-supported edges."""
    if len(lc) == 0:
        return Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int)), {"junctions_in": 0}
    junctions = [j for j in heuristic_junctions(lc, cfg) if j.confidence >= cfg.tau_conf]
    if len(junctions) < 2:
        return Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int)), {
            "junctions_in": len(junctions), "pairs_in": 0, "final_vertices": 0, "final_edges": 0}
    lc_norm, tf = normalize_cloud(lc)
    positions = tf.apply(np.stack([j.position for j in junctions]))
    confidences = np.asarray([j.confidence for j in junctions])
    pairs = select_pairs(confidences, cfg)
    probs = np.zeros((len(pairs), 5))
    for k, (i, j) in enumerate(pairs):
        cov = _edge_coverage(lc_norm, positions[i], positions[j], tube=cfg.eps)
        if cov >= cfg.heuristic_coverage:
            probs[k, PairClass.D1] = cov
            probs[k, PairClass.FAR] = 1.0 - cov
        else:
            probs[k, PairClass.FAR] = 1.0
    wf, report = postprocess(positions, confidences, pairs, probs,
                             tau_nms=cfg.tau_nms, tau_edge=cfg.tau_edge, h_max=cfg.h_max,
                             adjacency_merge_factor=cfg.adjacency_merge_factor)
    wf = tf.invert_wireframe(wf)
    return wf, report


# ---------------------------------------------------------------------------
# end-to-end


def reconstruct_wireframe(single: LptModel, pair: LptModel, lc: LineCloud,
                          cfg: InferenceConfig) -> tuple[Wireframe, dict]:
    """Cloud in, wireframe out: the full learned pipeline.

    Normalizes once, predicts junctions and pair classes in normalized space,
    post-processes there (thresholds are normalized units), and maps the
    result back to world coordinates.
    """
    if len(lc) == 0:
        return Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int)), {"junctions_in": 0}
    lc_norm, tf = normalize_cloud(lc)
    grid = SegmentGrid(lc_norm, cfg.eps)
    positions, conf, _, offset_norm = _predict_junctions_normalized(single, lc_norm, grid, cfg)
    raw_count = len(positions)
    # duplicate predictions pile up on every real junction; grouping them
    # before pair selection keeps the pair budget on distinct junction pairs
    kept, _ = nms_junctions(positions, conf, offset_norm, cfg.tau_nms)
    positions, conf, offset_norm = positions[kept], conf[kept], offset_norm[kept]
    pairs = select_pairs(conf, cfg)
    if pairs:
        probs = _predict_connectivity_normalized(pair, lc_norm, grid, positions, pairs, cfg)
    else:
        probs = np.zeros((0, 5))
    wf, report = postprocess(positions, conf, pairs, probs,
                             tau_nms=cfg.tau_nms, tau_edge=cfg.tau_edge, h_max=cfg.h_max,
                             adjacency_merge_factor=cfg.adjacency_merge_factor,
                             stability=offset_norm)
    report["junctions_in"] = raw_count
    report["junctions_deduplicated"] = len(kept)
    wf = tf.invert_wireframe(wf)
    violations = validate_wireframe(wf)
    if violations:
        raise GeometryError(f"reconstruction produced an invalid wireframe: {violations[0]}")
    return wf, report
