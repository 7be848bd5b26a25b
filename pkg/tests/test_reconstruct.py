import numpy as np
import pytest

from linewire.geometry import LineCloud, Wireframe, validate_wireframe
from linewire.labeling import PairClass
from linewire.net.model import LptConfig, LptModel
from linewire.reconstruct import (
    InferenceConfig,
    PredictedJunction,
    heuristic_junctions,
    heuristic_wireframe,
    postprocess,
    predict_connectivity,
    predict_junctions,
    reconstruct_wireframe,
    select_pairs,
)

from conftest import cube_wireframe, random_cloud, segments_on_wireframe


def one_hot_probs(cls, p=1.0):
    v = np.full(5, (1.0 - p) / 4.0)
    v[cls] = p
    return v


class TestPostprocess:
    def test_coincident_junctions_then_isolated_removal(self):
        # trace of the six stages: merge keeps the edge, then the single-edge
        # component disappears
        positions = np.array([[0, 0, 0], [0.01, 0, 0], [1, 0, 0]], float)
        conf = np.array([0.9, 0.8, 0.7])
        pairs = [(1, 2)]
        probs = np.array([one_hot_probs(PairClass.D1)])
        wf, report = postprocess(positions, conf, pairs, probs, tau_nms=0.05)
        assert report["junctions_after_nms"] == 2
        assert report["edges_instantiated"] == 1
        assert report["isolated_edges_removed"] == 1
        assert wf.n_vertices == 0 and wf.n_edges == 0

    def test_perfect_cube_is_fixed_point(self):
        cube = cube_wireframe()
        conf = np.ones(8)
        edge_set = cube.edge_set()
        pairs = [(a, b) for a in range(8) for b in range(a + 1, 8)]
        probs = np.array([
            one_hot_probs(PairClass.D1) if (a, b) in edge_set else one_hot_probs(PairClass.FAR)
            for a, b in pairs])
        wf, _ = postprocess(cube.vertices, conf, pairs, probs, tau_nms=0.05)
        assert wf.n_vertices == 8
        assert wf.edge_set() == edge_set
        np.testing.assert_allclose(np.sort(wf.vertices, axis=0), np.sort(cube.vertices, axis=0))

    def test_spurious_degree_zero_junction_dropped(self):
        cube = cube_wireframe()
        positions = np.vstack([cube.vertices, [[5.0, 5.0, 5.0]]])
        conf = np.ones(9)
        edge_set = cube.edge_set()
        pairs = [(a, b) for a in range(9) for b in range(a + 1, 9)]
        probs = np.array([
            one_hot_probs(PairClass.D1) if (a, b) in edge_set else one_hot_probs(PairClass.FAR)
            for a, b in pairs])
        wf, _ = postprocess(positions, conf, pairs, probs, tau_nms=0.05)
        assert wf.n_vertices == 8
        assert not np.any(np.all(np.isclose(wf.vertices, [5.0, 5.0, 5.0]), axis=1))

    def test_d0_merge_reroutes_edges(self):
        positions = np.array([[0, 0, 0], [0.3, 0, 0], [1, 0, 0], [1, 1, 0]], float)
        conf = np.array([0.9, 0.6, 0.8, 0.8])
        # 0 and 1 are the same junction (D0); edges 1-2, 2-3, plus 0-3 so the
        # result is a triangle after merging 1 into 0
        pairs = [(0, 1), (1, 2), (2, 3), (0, 3)]
        probs = np.array([one_hot_probs(PairClass.D0), one_hot_probs(PairClass.D1),
                          one_hot_probs(PairClass.D1), one_hot_probs(PairClass.D1)])
        wf, report = postprocess(positions, conf, pairs, probs, tau_nms=0.01)
        assert report["d0_merges"] == 1
        assert wf.n_vertices == 3
        assert wf.n_edges == 3
        # the kept vertex is the higher-confidence one at the origin
        assert np.any(np.all(wf.vertices == [0, 0, 0], axis=1))

    def test_empty_inputs(self):
        wf, report = postprocess(np.zeros((0, 3)), np.zeros(0), [], np.zeros((0, 5)),
                                 tau_nms=0.05)
        assert wf.n_vertices == 0
        assert validate_wireframe(wf) == []

    def test_output_always_validates(self, rng):
        for trial in range(25):
            k = int(rng.integers(2, 12))
            positions = rng.uniform(-1, 1, size=(k, 3))
            conf = rng.uniform(0.2, 1.0, size=k)
            pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
            probs = rng.dirichlet(np.ones(5), size=len(pairs))
            wf, _ = postprocess(positions, conf, pairs, probs, tau_nms=0.1)
            assert validate_wireframe(wf) == []

    def test_idempotence_on_own_output(self, rng):
        # a postprocessed wireframe, re-fed with unit confidences and pure D1
        # classes on its own edges, must come back unchanged
        fixed = 0
        for trial in range(100):
            k = int(rng.integers(3, 14))
            positions = rng.uniform(-1, 1, size=(k, 3))
            conf = rng.uniform(0.2, 1.0, size=k)
            pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
            probs = rng.dirichlet(np.ones(5) * 0.7, size=len(pairs))
            wf, _ = postprocess(positions, conf, pairs, probs, tau_nms=0.1)
            assert validate_wireframe(wf) == []
            if wf.n_vertices == 0:
                continue
            pairs2 = [tuple(e) for e in wf.edges]
            probs2 = np.array([one_hot_probs(PairClass.D1) for _ in pairs2])
            wf2, _ = postprocess(wf.vertices, np.ones(wf.n_vertices), pairs2, probs2,
                                 tau_nms=0.1)
            np.testing.assert_array_equal(wf2.vertices, wf.vertices)
            assert wf2.edge_set() == wf.edge_set()
            fixed += 1
        assert fixed >= 20  # most random inputs produce a non-empty wireframe


class TestSelectPairs:
    def test_two_junctions_one_pair(self):
        assert select_pairs(np.array([0.9, 0.8]), InferenceConfig()) == [(0, 1)]

    def test_single_junction_empty(self):
        assert select_pairs(np.array([0.9]), InferenceConfig()) == []

    def test_equal_confidence_tie_break(self):
        cfg = InferenceConfig(top_m=3, pair_budget=10)
        pairs = select_pairs(np.array([0.5, 0.5, 0.5, 0.5]), cfg)
        # top 3 by index order, all three pairs, lexicographic
        assert pairs == [(0, 1), (0, 2), (1, 2)]

    def test_budget_truncation_matches_brute_force(self, rng):
        conf = rng.uniform(0.1, 1.0, size=10)
        cfg = InferenceConfig(top_m=10, pair_budget=20)
        got = select_pairs(conf, cfg)
        assert len(got) == 20
        # brute-force ranking oracle
        scored = sorted(
            (-(conf[a] * conf[b]), a, b)
            for a in range(10) for b in range(a + 1, 10))
        want = [(a, b) for _, a, b in scored[:20]]
        assert got == want


@pytest.fixture(scope="module")
def models():
    return LptModel(LptConfig.single(seed=0)), LptModel(LptConfig.pair(seed=1))


@pytest.fixture(scope="module")
def cloud():
    rng = np.random.default_rng(77)
    return random_cloud(rng, 120, extent=3.0)


class TestLearnedPipeline:
    def test_tau_conf_above_max_gives_empty(self, models, cloud):
        cfg = InferenceConfig(g_queries=16, n_lines=8, tau_conf=1.1, seed=3)
        assert predict_junctions(models[0], cloud, cfg) == []

    def test_tau_conf_zero_gives_all_queries(self, models, cloud):
        cfg = InferenceConfig(g_queries=16, n_lines=8, tau_conf=0.0, seed=3)
        preds = predict_junctions(models[0], cloud, cfg)
        assert len(preds) == 16

    def test_monotone_in_tau_conf(self, models, cloud):
        counts = []
        for tau in (0.0, 0.3, 0.5, 0.7, 1.0):
            cfg = InferenceConfig(g_queries=24, n_lines=8, tau_conf=tau, seed=3)
            counts.append(len(predict_junctions(models[0], cloud, cfg)))
        assert counts == sorted(counts, reverse=True)

    def test_empty_cloud(self, models):
        cfg = InferenceConfig()
        assert predict_junctions(models[0], LineCloud(np.zeros((0, 2, 3))), cfg) == []

    def test_connectivity_probabilities(self, models, cloud):
        cfg = InferenceConfig(g_queries=12, n_lines=8, n_pair_lines=12, tau_conf=0.0, seed=3)
        junctions = predict_junctions(models[0], cloud, cfg)
        pairs = select_pairs(np.array([j.confidence for j in junctions]), cfg)
        probs = predict_connectivity(models[1], cloud, junctions, pairs, cfg)
        assert probs.shape == (len(pairs), 5)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        probs2 = predict_connectivity(models[1], cloud, junctions, pairs, cfg)
        np.testing.assert_array_equal(probs, probs2)

    def test_end_to_end_valid_and_deterministic(self, models, cloud):
        cfg = InferenceConfig(g_queries=24, n_lines=8, n_pair_lines=12, tau_conf=0.3, seed=5)
        wf1, report = reconstruct_wireframe(models[0], models[1], cloud, cfg)
        wf2, _ = reconstruct_wireframe(models[0], models[1], cloud, cfg)
        assert validate_wireframe(wf1) == []
        np.testing.assert_array_equal(wf1.vertices, wf2.vertices)
        np.testing.assert_array_equal(wf1.edges, wf2.edges)
        assert report["junctions_in"] >= report["junctions_after_nms"]


class TestHeuristic:
    def test_three_orthogonal_lines_meet(self):
        # closed-form least squares: the intersection point is exact
        c = np.array([1.0, 2.0, 3.0])
        segs = []
        for axis in range(3):
            u = np.zeros(3)
            u[axis] = 1.0
            # two collinear fragments per line so every direction cluster has 2 members
            segs.append([c - u, c - 0.1 * u])
            segs.append([c + 0.1 * u, c + u])
        lc = LineCloud(np.asarray(segs))
        cfg = InferenceConfig(eps=0.4, g_queries=12, n_lines=12, seed=0)
        preds = heuristic_junctions(lc, cfg)
        best = max(preds, key=lambda p: p.confidence)
        assert best.confidence == 1.0
        np.testing.assert_allclose(best.position, c, atol=1e-6)

    def test_parallel_lines_zero_confidence(self):
        segs = [[(0, y, 0), (1, y, 0)] for y in np.linspace(0, 0.1, 5)]
        lc = LineCloud(np.asarray(segs))
        cfg = InferenceConfig(eps=0.5, g_queries=8, n_lines=8, seed=0)
        preds = heuristic_junctions(lc, cfg)
        assert all(p.confidence == 0.0 for p in preds)

    def test_empty_patch_zero_confidence(self, rng):
        lc = random_cloud(rng, 10)
        cfg = InferenceConfig(eps=1e-9, g_queries=4, n_lines=4, seed=0)
        preds = heuristic_junctions(lc, cfg)
        assert all(p.confidence == 0.0 for p in preds)

    def test_heuristic_wireframe_on_clean_cube(self):
        cube = cube_wireframe(side=4.0)
        lc = segments_on_wireframe(cube, per_edge=4)
        cfg = InferenceConfig(eps=0.04, g_queries=64, n_lines=32, tau_conf=0.5,
                              tau_nms=0.08, seed=2)
        wf, _ = heuristic_wireframe(lc, cfg)
        assert validate_wireframe(wf) == []
        # all 8 corners recovered within a tight radius
        hits = 0
        for v in cube.vertices:
            if wf.n_vertices and np.min(np.linalg.norm(wf.vertices - v, axis=1)) < 0.2:
                hits += 1
        assert hits >= 6
