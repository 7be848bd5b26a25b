"""Evaluation: junction precision/recall, structural precision/recall, and
the wireframe edit distance.

"AP" here is the precision of the final (unranked) prediction set: the
pipeline's post-processed output carries no retrieval ranking, so vAP / sAP
mirror the columns of the usual tables while being plain precision at each
threshold. Precision/recall matching is greedy in descending confidence;
the edit distance matches vertices optimally (Hungarian) because it seeks a
minimal edit script.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Wireframe

V_ETAS = (0.15, 0.25, 0.35)
S_ETAS = (0.25, 0.35, 0.50)
WED_TAU_MATCH = 0.15


def _greedy_order(n: int, confidences: np.ndarray | None) -> np.ndarray:
    if confidences is None:
        return np.arange(n)
    return np.lexsort((np.arange(n), -np.asarray(confidences, dtype=np.float64)))


def junction_pr(pred: np.ndarray, gt: np.ndarray, eta: float,
                confidences: np.ndarray | None = None) -> tuple[float, float, bool]:
    """Greedy one-to-one junction matching at threshold eta.

    Predictions are consumed in descending confidence (input order when
    uniform); each claims the nearest unconsumed GT vertex within eta.
    Returns (precision, recall, pred_empty); empty predictions give
    precision 0 with the flag set.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0:
        return 0.0, 0.0, True
    consumed = np.zeros(len(gt), dtype=bool)
    tp = 0
    for i in _greedy_order(len(pred), confidences):
        if len(gt) == 0:
            break
        d = np.linalg.norm(gt - pred[i], axis=1)
        d[consumed] = np.inf
        j = int(np.argmin(d))
        if d[j] <= eta:
            consumed[j] = True
            tp += 1
    recall = tp / len(gt) if len(gt) else 0.0
    return tp / len(pred), recall, False


def _edge_match_cost(pu, pv, ga, gb) -> float:
    """Best endpoint assignment: min over both pairings of the larger endpoint gap."""
    direct = max(float(np.linalg.norm(pu - ga)), float(np.linalg.norm(pv - gb)))
    crossed = max(float(np.linalg.norm(pu - gb)), float(np.linalg.norm(pv - ga)))
    return min(direct, crossed)


def structural_pr(pred: Wireframe, gt: Wireframe, eta: float) -> tuple[float, float, bool]:
    """Greedy one-to-one edge matching at threshold eta (endpoint-pair distance)."""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if pred.n_edges == 0:
        return 0.0, 0.0, True
    consumed = np.zeros(gt.n_edges, dtype=bool)
    tp = 0
    for i in _greedy_order(pred.n_edges, pred.edge_conf):
        pu = pred.vertices[pred.edges[i, 0]]
        pv = pred.vertices[pred.edges[i, 1]]
        best_j, best_cost = -1, np.inf
        for j in range(gt.n_edges):
            if consumed[j]:
                continue
            cost = _edge_match_cost(pu, pv, gt.vertices[gt.edges[j, 0]],
                                    gt.vertices[gt.edges[j, 1]])
            if cost < best_cost:
                best_j, best_cost = j, cost
        if best_j >= 0 and best_cost <= eta:
            consumed[best_j] = True
            tp += 1
    recall = tp / gt.n_edges if gt.n_edges else 0.0
    return tp / pred.n_edges, recall, False


@dataclass
class WedComponents:
    add_vertex_num: int = 0
    add_vertex_dist: float = 0.0
    add_edge_num: int = 0
    add_edge_dist: float = 0.0
    remove_edge_num: int = 0
    remove_edge_dist: float = 0.0

    @property
    def total_num(self) -> int:
        return self.add_vertex_num + self.add_edge_num + self.remove_edge_num

    @property
    def total_dist(self) -> float:
        return self.add_vertex_dist + self.add_edge_dist + self.remove_edge_dist


def wed(pred: Wireframe, gt: Wireframe, tau_match: float = WED_TAU_MATCH) -> WedComponents:
    """Edit operations turning the prediction into the ground truth.

    Vertices match one-to-one by minimum-cost bipartite assignment, admitting
    only pairs within tau_match. Unmatched GT vertices cost an add-vertex
    (distance to the nearest prediction, or to the GT centroid with no
    predictions); predicted edges whose matched endpoint pair is not a GT edge
    cost a remove-edge (their own length); uncovered GT edges cost an add-edge
    (their length). Vertices are never removed: spurious predictions only pay
    through their edges.
    """
    if tau_match <= 0:
        raise ValueError(f"tau_match must be positive, got {tau_match}")
    n_gt, n_pred = gt.n_vertices, pred.n_vertices
    gt_to_pred: dict[int, int] = {}
    if n_gt and n_pred:
        d = np.linalg.norm(gt.vertices[:, None, :] - pred.vertices[None, :, :], axis=2)
        big = 1e9
        cost = np.where(d <= tau_match, d, big)
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            if d[r, c] <= tau_match:
                gt_to_pred[int(r)] = int(c)

    out = WedComponents()
    if n_gt:
        centroid = gt.vertices.mean(axis=0)
        for r in range(n_gt):
            if r in gt_to_pred:
                continue
            out.add_vertex_num += 1
            if n_pred:
                out.add_vertex_dist += float(
                    np.min(np.linalg.norm(pred.vertices - gt.vertices[r], axis=1)))
            else:
                out.add_vertex_dist += float(np.linalg.norm(gt.vertices[r] - centroid))

    pred_to_gt = {c: r for r, c in gt_to_pred.items()}
    gt_edges = gt.edge_set()
    covered = set()
    pred_lengths = pred.edge_lengths()
    for k, (u, v) in enumerate(pred.edges):
        gu, gv = pred_to_gt.get(int(u)), pred_to_gt.get(int(v))
        if gu is None or gv is None:
            out.remove_edge_num += 1
            out.remove_edge_dist += float(pred_lengths[k])
            continue
        key = (min(gu, gv), max(gu, gv))
        if key in gt_edges:
            covered.add(key)
        else:
            out.remove_edge_num += 1
            out.remove_edge_dist += float(pred_lengths[k])

    gt_lengths = gt.edge_lengths()
    for k, (a, b) in enumerate(gt.edges):
        if (int(a), int(b)) not in covered:
            out.add_edge_num += 1
            out.add_edge_dist += float(gt_lengths[k])
    return out


@dataclass
class MetricsReport:
    """All metrics at the standard threshold sets, plus averages and WED."""

    v_ap: dict
    v_recall: dict
    s_ap: dict
    s_recall: dict
    wed_components: WedComponents
    pred_vertices_empty: bool = False
    pred_edges_empty: bool = False

    @property
    def v_ap_avg(self) -> float:
        return float(np.mean(list(self.v_ap.values())))

    @property
    def v_recall_avg(self) -> float:
        return float(np.mean(list(self.v_recall.values())))

    @property
    def s_ap_avg(self) -> float:
        return float(np.mean(list(self.s_ap.values())))

    @property
    def s_recall_avg(self) -> float:
        return float(np.mean(list(self.s_recall.values())))

    def to_json(self) -> str:
        doc = {
            "v_ap": {str(k): v for k, v in self.v_ap.items()},
            "v_recall": {str(k): v for k, v in self.v_recall.items()},
            "s_ap": {str(k): v for k, v in self.s_ap.items()},
            "s_recall": {str(k): v for k, v in self.s_recall.items()},
            "v_ap_avg": self.v_ap_avg,
            "v_recall_avg": self.v_recall_avg,
            "s_ap_avg": self.s_ap_avg,
            "s_recall_avg": self.s_recall_avg,
            "wed": {
                "add_vertex": {"num": self.wed_components.add_vertex_num,
                               "dist": self.wed_components.add_vertex_dist},
                "add_edge": {"num": self.wed_components.add_edge_num,
                             "dist": self.wed_components.add_edge_dist},
                "remove_edge": {"num": self.wed_components.remove_edge_num,
                                "dist": self.wed_components.remove_edge_dist},
                "total": {"num": self.wed_components.total_num,
                          "dist": self.wed_components.total_dist},
            },
            "pred_vertices_empty": self.pred_vertices_empty,
            "pred_edges_empty": self.pred_edges_empty,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        w = doc["wed"]
        comp = WedComponents(
            add_vertex_num=w["add_vertex"]["num"], add_vertex_dist=w["add_vertex"]["dist"],
            add_edge_num=w["add_edge"]["num"], add_edge_dist=w["add_edge"]["dist"],
            remove_edge_num=w["remove_edge"]["num"], remove_edge_dist=w["remove_edge"]["dist"])
        return cls(
            v_ap={float(k): v for k, v in doc["v_ap"].items()},
            v_recall={float(k): v for k, v in doc["v_recall"].items()},
            s_ap={float(k): v for k, v in doc["s_ap"].items()},
            s_recall={float(k): v for k, v in doc["s_recall"].items()},
            wed_components=comp,
            pred_vertices_empty=doc["pred_vertices_empty"],
            pred_edges_empty=doc["pred_edges_empty"],
        )

    def format_table(self, title: str = "") -> str:
        lines = []
        if title:
            lines.append(title)
        v_cols = "  ".join(f"eta={e:<4}" for e in self.v_ap)
        lines.append(f"junctions   {v_cols}  avg")
        lines.append("  vAP       " + "  ".join(f"{100 * self.v_ap[e]:7.2f}" for e in self.v_ap)
                      + f"  {100 * self.v_ap_avg:7.2f}")
        lines.append("  vRecall   " + "  ".join(f"{100 * self.v_recall[e]:7.2f}" for e in self.v_recall)
                      + f"  {100 * self.v_recall_avg:7.2f}")
        s_cols = "  ".join(f"eta={e:<4}" for e in self.s_ap)
        lines.append(f"wireframe   {s_cols}  avg")
        lines.append("  sAP       " + "  ".join(f"{100 * self.s_ap[e]:7.2f}" for e in self.s_ap)
                      + f"  {100 * self.s_ap_avg:7.2f}")
        lines.append("  sRecall   " + "  ".join(f"{100 * self.s_recall[e]:7.2f}" for e in self.s_recall)
                      + f"  {100 * self.s_recall_avg:7.2f}")
        w = self.wed_components
        num = lambda x: f"{x:8d}" if float(x).is_integer() else f"{x:8.3f}"
        lines.append("WED            num     dist")
        lines.append(f"  +vertex {num(w.add_vertex_num)} {w.add_vertex_dist:8.3f}")
        lines.append(f"  +edge   {num(w.add_edge_num)} {w.add_edge_dist:8.3f}")
        lines.append(f"  -edge   {num(w.remove_edge_num)} {w.remove_edge_dist:8.3f}")
        lines.append(f"  total   {num(w.total_num)} {w.total_dist:8.3f}")
        return "\n".join(lines)


def evaluate(pred: Wireframe, gt: Wireframe, v_etas=V_ETAS, s_etas=S_ETAS,
             tau_match: float = WED_TAU_MATCH) -> MetricsReport:
    """All metrics at the standard thresholds; averages are arithmetic means."""
    v_ap, v_recall = {}, {}
    empty_v = pred.n_vertices == 0
    for eta in v_etas:
        p, r, _ = junction_pr(pred.vertices, gt.vertices, eta, pred.vertex_conf)
        v_ap[eta], v_recall[eta] = p, r
    s_ap, s_recall = {}, {}
    empty_e = pred.n_edges == 0
    for eta in s_etas:
        p, r, _ = structural_pr(pred, gt, eta)
        s_ap[eta], s_recall[eta] = p, r
    return MetricsReport(v_ap=v_ap, v_recall=v_recall, s_ap=s_ap, s_recall=s_recall,
                         wed_components=wed(pred, gt, tau_match),
                         pred_vertices_empty=empty_v, pred_edges_empty=empty_e)


def aggregate_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Field-wise arithmetic mean over buildings (WED nums become means too)."""
    if not reports:
        raise ValueError("nothing to aggregate")

    def mean_dict(dicts):
        keys = dicts[0].keys()
        return {k: float(np.mean([d[k] for d in dicts])) for k in keys}

    comp = WedComponents(
        add_vertex_num=float(np.mean([r.wed_components.add_vertex_num for r in reports])),
        add_vertex_dist=float(np.mean([r.wed_components.add_vertex_dist for r in reports])),
        add_edge_num=float(np.mean([r.wed_components.add_edge_num for r in reports])),
        add_edge_dist=float(np.mean([r.wed_components.add_edge_dist for r in reports])),
        remove_edge_num=float(np.mean([r.wed_components.remove_edge_num for r in reports])),
        remove_edge_dist=float(np.mean([r.wed_components.remove_edge_dist for r in reports])),
    )
    return MetricsReport(
        v_ap=mean_dict([r.v_ap for r in reports]),
        v_recall=mean_dict([r.v_recall for r in reports]),
        s_ap=mean_dict([r.s_ap for r in reports]),
        s_recall=mean_dict([r.s_recall for r in reports]),
        wed_components=comp,
        pred_vertices_empty=any(r.pred_vertices_empty for r in reports),
        pred_edges_empty=any(r.pred_edges_empty for r in reports),
    )
