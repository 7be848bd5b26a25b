import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linewire.geometry import Wireframe
from linewire.metrics import (
    MetricsReport,
    aggregate_reports,
    evaluate,
    junction_pr,
    structural_pr,
    wed,
)

from conftest import cube_wireframe


def unit_square():
    return Wireframe(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float),
                     np.array([(0, 1), (1, 2), (2, 3), (0, 3)]))


class TestJunctionPr:
    def test_exact_match(self):
        gt = cube_wireframe().vertices
        p, r, empty = junction_pr(gt.copy(), gt, eta=0.15)
        assert (p, r, empty) == (1.0, 1.0, False)

    def test_empty_prediction_flagged(self):
        p, r, empty = junction_pr(np.zeros((0, 3)), cube_wireframe().vertices, eta=0.15)
        assert (p, r) == (0.0, 0.0)
        assert empty

    def test_half_matched(self):
        # exhaustive matching oracle: one prediction inside eta, one far away
        gt = np.array([[0, 0, 0], [1, 0, 0]], float)
        pred = np.array([[0, 0, 0.1], [5, 5, 5]], float)
        p, r, _ = junction_pr(pred, gt, eta=0.25)
        assert (p, r) == (0.5, 0.5)

    def test_one_to_one_consumption(self):
        # two predictions near one GT vertex: only one can claim it
        gt = np.array([[0, 0, 0], [9, 9, 9]], float)
        pred = np.array([[0.01, 0, 0], [0, 0.01, 0]], float)
        p, r, _ = junction_pr(pred, gt, eta=0.25)
        assert p == 0.5 and r == 0.5

    def test_confidence_order_matters(self):
        gt = np.array([[0, 0, 0]], float)
        pred = np.array([[0.2, 0, 0], [0.01, 0, 0]], float)
        # uniform: input order, first prediction consumes the vertex
        p_uniform, _, _ = junction_pr(pred, gt, eta=0.25)
        assert p_uniform == 0.5
        # with confidence, the nearer one goes first; still 0.5 but by choice
        p_conf, _, _ = junction_pr(pred, gt, eta=0.25, confidences=np.array([0.1, 0.9]))
        assert p_conf == 0.5

    def test_invalid_eta(self):
        with pytest.raises(ValueError):
            junction_pr(np.zeros((1, 3)), np.zeros((1, 3)), eta=0.0)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_matches_greedy_oracle(self, seed):
        # greedy re-implementation on tiny instances (<= 8 vertices)
        rng = np.random.default_rng(seed)
        n_gt, n_pred = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        gt = rng.uniform(-1, 1, (n_gt, 3))
        pred = rng.uniform(-1, 1, (n_pred, 3))
        eta = float(rng.uniform(0.1, 1.0))
        p, r, _ = junction_pr(pred, gt, eta)
        consumed, tp = set(), 0
        for i in range(n_pred):
            cands = [(np.linalg.norm(gt[j] - pred[i]), j) for j in range(n_gt)
                     if j not in consumed and np.linalg.norm(gt[j] - pred[i]) <= eta]
            if cands:
                consumed.add(min(cands)[1])
                tp += 1
        assert p == tp / n_pred
        assert r == tp / n_gt

    def test_input_order_invariance_of_counts(self, rng):
        gt = rng.uniform(-1, 1, (6, 3))
        pred = rng.uniform(-1, 1, (7, 3))
        p1, r1, _ = junction_pr(pred, gt, eta=0.5)
        perm = rng.permutation(6)
        p2, r2, _ = junction_pr(pred, gt[perm], eta=0.5)
        assert (p1, r1) == (p2, r2)


class TestStructuralPr:
    def test_identical(self):
        wf = unit_square()
        p, r, _ = structural_pr(wf, wf, eta=0.1)
        assert (p, r) == (1.0, 1.0)

    def test_reversed_endpoints_still_match(self):
        gt = unit_square()
        pred = Wireframe(gt.vertices[::-1].copy(),
                         np.array([(3, 2), (2, 1), (1, 0), (3, 0)]))
        p, r, _ = structural_pr(pred, gt, eta=0.1)
        assert (p, r) == (1.0, 1.0)

    def test_three_correct_one_diagonal(self):
        # exhaustive assignment oracle: diagonal matches nothing at eta = 0.1
        gt = unit_square()
        pred = Wireframe(gt.vertices.copy(), np.array([(0, 1), (1, 2), (2, 3), (0, 2)]))
        p, r, _ = structural_pr(pred, gt, eta=0.1)
        assert (p, r) == (0.75, 0.75)

    def test_empty_prediction(self):
        pred = Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int))
        p, r, empty = structural_pr(pred, unit_square(), eta=0.25)
        assert (p, r) == (0.0, 0.0) and empty

    def test_monotonicity_remove_tp(self):
        gt = unit_square()
        pred_full = Wireframe(gt.vertices.copy(), gt.edges.copy())
        _, r_full, _ = structural_pr(pred_full, gt, eta=0.25)
        pred_less = Wireframe(gt.vertices.copy(), gt.edges[:-1].copy())
        _, r_less, _ = structural_pr(pred_less, gt, eta=0.25)
        assert r_less <= r_full

    def test_monotonicity_add_far_edge(self):
        gt = unit_square()
        p_before, _, _ = structural_pr(gt, gt, eta=0.25)
        verts = np.vstack([gt.vertices, [[7, 7, 7], [8, 8, 8]]])
        pred = Wireframe(verts, np.vstack([gt.edges, [[4, 5]]]))
        p_after, _, _ = structural_pr(pred, gt, eta=0.25)
        assert p_after <= p_before


class TestWed:
    def test_identical_all_zero(self):
        wf = cube_wireframe()
        comp = wed(wf, wf)
        assert comp.total_num == 0
        assert comp.total_dist == 0.0

    def test_missing_edge(self):
        gt = Wireframe(np.array([[0, 0, 0], [2, 0, 0], [2, 2, 0]], float),
                       np.array([(0, 1), (1, 2)]))
        pred = Wireframe(gt.vertices.copy(), np.array([(1, 2)]))
        comp = wed(pred, gt)
        assert comp.add_edge_num == 1
        assert comp.add_edge_dist == pytest.approx(2.0)
        assert comp.add_vertex_num == 0 and comp.remove_edge_num == 0

    def test_extra_vertex_with_edge(self):
        # four-step trace: extra vertex is unmatched, its edge is removed,
        # vertices themselves are never removed
        gt = unit_square()
        verts = np.vstack([gt.vertices, [[0.5, 0.5, 1.5]]])
        pred = Wireframe(verts, np.vstack([gt.edges, [[0, 4]]]))
        comp = wed(pred, gt)
        assert comp.remove_edge_num == 1
        assert comp.remove_edge_dist == pytest.approx(np.linalg.norm([0.5, 0.5, 1.5]))
        assert comp.add_vertex_num == 0
        assert comp.add_edge_num == 0

    def test_empty_prediction(self):
        gt = cube_wireframe()
        pred = Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int))
        comp = wed(pred, gt)
        assert comp.add_vertex_num == gt.n_vertices
        assert comp.add_edge_num == gt.n_edges
        assert comp.remove_edge_num == 0
        # distances fall back to the GT centroid
        centroid = gt.vertices.mean(axis=0)
        want = float(np.sum(np.linalg.norm(gt.vertices - centroid, axis=1)))
        assert comp.add_vertex_dist == pytest.approx(want)

    def test_totals_are_component_sums(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 8))
            gt = Wireframe(rng.uniform(-1, 1, (n, 3)),
                           np.array([(i, i + 1) for i in range(n - 1)]))
            m = int(rng.integers(2, 8))
            pred = Wireframe(rng.uniform(-1, 1, (m, 3)),
                             np.array([(i, i + 1) for i in range(m - 1)]))
            comp = wed(pred, gt, tau_match=0.3)
            assert comp.total_num == comp.add_vertex_num + comp.add_edge_num + comp.remove_edge_num
            assert comp.total_dist == pytest.approx(
                comp.add_vertex_dist + comp.add_edge_dist + comp.remove_edge_dist)

    def test_matching_is_optimal(self):
        # two GT vertices, two predictions: greedy by input order would pair
        # them badly; the Hungarian assignment must not
        gt = Wireframe(np.array([[0, 0, 0], [0.1, 0, 0]], float), np.array([(0, 1)]))
        pred = Wireframe(np.array([[0.09, 0, 0], [0.0, 0, 0]], float), np.array([(0, 1)]))
        comp = wed(pred, gt, tau_match=0.1)
        assert comp.add_vertex_num == 0  # optimal pairing matches both


class TestEvaluate:
    def test_perfect_prediction(self):
        wf = cube_wireframe(side=3.0)
        report = evaluate(wf, wf)
        for d in (report.v_ap, report.v_recall, report.s_ap, report.s_recall):
            assert all(v == 1.0 for v in d.values())
        assert report.wed_components.total_num == 0
        assert report.v_ap_avg == 1.0 and report.s_recall_avg == 1.0

    def test_empty_prediction(self):
        gt = cube_wireframe()
        pred = Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int))
        report = evaluate(pred, gt)
        assert all(v == 0.0 for v in report.v_recall.values())
        assert all(v == 0.0 for v in report.s_recall.values())
        assert report.wed_components.add_vertex_num == gt.n_vertices
        assert report.wed_components.add_edge_num == gt.n_edges
        assert report.pred_vertices_empty and report.pred_edges_empty

    def test_report_round_trip(self):
        wf = cube_wireframe()
        pred = Wireframe(wf.vertices + 0.01, wf.edges[:-2])
        report = evaluate(pred, wf)
        back = MetricsReport.from_json(report.to_json())
        assert back.to_json() == report.to_json()
        assert back.v_ap == report.v_ap
        assert back.wed_components.total_dist == report.wed_components.total_dist

    def test_format_table_runs(self):
        wf = cube_wireframe()
        text = evaluate(wf, wf).format_table("cube")
        assert "vAP" in text and "WED" in text and "100.00" in text

    def test_vertex_and_edge_order_invariance(self, rng):
        gt = cube_wireframe()
        pred = Wireframe(gt.vertices + rng.normal(0, 0.02, (8, 3)), gt.edges.copy())
        r1 = evaluate(pred, gt)
        perm = rng.permutation(8)
        inv = np.argsort(perm)
        pred2 = Wireframe(pred.vertices[perm], inv[pred.edges][:, ::-1][::-1])
        r2 = evaluate(pred2, gt)
        assert r1.v_ap == r2.v_ap and r1.s_ap == r2.s_ap
        assert r1.wed_components.total_dist == pytest.approx(r2.wed_components.total_dist)


class TestAggregate:
    def test_mean_of_reports(self):
        wf = cube_wireframe()
        perfect = evaluate(wf, wf)
        empty = evaluate(Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int)), wf)
        agg = aggregate_reports([perfect, empty])
        assert agg.v_recall[0.25] == pytest.approx(0.5)
        assert agg.wed_components.add_vertex_num == pytest.approx(4.0)
