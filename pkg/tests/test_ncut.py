import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from panfuse.core import DenseMap, ValidationError
from panfuse.ncut import (
    AffinityGraph,
    NCutConfig,
    NoValidSplitError,
    build_affinity,
    delineate,
    downsample_max,
    segment_to_nodes,
    solve_fiedler,
    split_segment,
    stability_check,
    upsample_instances,
)

import oracles

CFG = NCutConfig(
    downsample=(8, 8),
    radius=3,
    beta=10.0,
    cut_cost_threshold=0.1,
    stability_ratio_threshold=0.06,
    histogram_bins=20,
    min_instance_size=1,
    max_recursion_depth=12,
    exhaustive_split=True,
)


def graph_from_dense(weights):
    mat = sp.csr_matrix(np.asarray(weights, dtype=np.float64))
    mat.setdiag(0.0)
    mat.eliminate_zeros()
    return AffinityGraph(
        matrix=mat,
        shape=(1, weights.shape[0]),
        degrees=np.asarray(mat.sum(axis=1)).ravel(),
    )


def two_cliques(n_side=5, bridge=1e-4):
    n = 2 * n_side
    w = np.zeros((n, n))
    w[:n_side, :n_side] = 1.0
    w[n_side:, n_side:] = 1.0
    np.fill_diagonal(w, 0.0)
    w[n_side - 1, n_side] = w[n_side, n_side - 1] = bridge
    return w


class TestBuildAffinity:
    def test_all_zero_boundary_gives_unit_affinities(self):
        soft = DenseMap(np.zeros((6, 6), np.float32))
        cfg = NCutConfig(downsample=(6, 6), radius=2, beta=10.0)
        graph = build_affinity(soft, cfg)
        assert graph.matrix.nnz > 0
        assert np.allclose(graph.matrix.data, 1.0)

    def test_distance_one_decays_to_exp_minus_beta(self):
        soft = DenseMap(np.ones((1, 2), np.float32))
        cfg = NCutConfig(downsample=(2, 1), radius=1, beta=10.0)
        graph = build_affinity(soft, cfg)
        assert graph.matrix[0, 1] == pytest.approx(np.exp(-10.0), rel=1e-12)
        assert graph.matrix[0, 1] == pytest.approx(4.54e-5, abs=1e-6)

    def test_vertical_line_matches_walk_oracle(self):
        rng = np.random.default_rng(0)
        soft = (rng.random((8, 8)) * 0.2).astype(np.float32)
        soft[:, 4] = 0.9
        cfg = NCutConfig(downsample=(8, 8), radius=3, beta=7.0)
        graph = build_affinity(DenseMap(soft), cfg)
        expected = oracles.affinity_entries(soft.astype(np.float64), 3, 7.0)
        mat = graph.matrix.tocoo()
        got = {(int(i), int(j)): v for i, j, v in zip(mat.row, mat.col, mat.data)}
        assert set(got) == set(expected)
        for key, v in expected.items():
            assert got[key] == pytest.approx(v, rel=1e-15)

    def test_crossing_edges_carry_line_max(self):
        soft = np.zeros((8, 8), np.float32)
        soft[:, 4] = 0.9
        cfg = NCutConfig(downsample=(8, 8), radius=3, beta=7.0)
        graph = build_affinity(DenseMap(soft), cfg)
        # edge crossing the painted column picks up its value
        i, j = 3 * 8 + 3, 3 * 8 + 5
        line_max = np.float64(np.float32(0.9))
        assert graph.matrix[i, j] == pytest.approx(np.exp(-7.0 * line_max), rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), radius=st.integers(1, 3))
    def test_symmetry_and_range(self, seed, radius):
        rng = np.random.default_rng(seed)
        soft = DenseMap(rng.random((7, 9)).astype(np.float32))
        cfg = NCutConfig(downsample=(9, 7), radius=radius, beta=5.0)
        graph = build_affinity(soft, cfg)
        diff = graph.matrix - graph.matrix.T
        assert abs(diff).max() == 0.0
        assert graph.matrix.data.min() > 0.0
        assert graph.matrix.data.max() <= 1.0
        assert graph.matrix.diagonal().max() == 0.0

    def test_downsample_max_blocks(self):
        arr = np.arange(16, dtype=np.float64).reshape(4, 4)
        out = downsample_max(arr, (2, 2))
        assert out.tolist() == [[5, 7], [13, 15]]


class TestSolveFiedler:
    def test_weakly_joined_cliques(self):
        w = two_cliques(5, 1e-4)
        graph = graph_from_dense(w)
        sol = solve_fiedler(graph, np.arange(10), CFG)
        lam_oracle, _ = oracles.dense_generalized_fiedler(w)
        assert sol.eigenvalue == pytest.approx(lam_oracle, rel=1e-8, abs=1e-12)
        assert sol.eigenvalue < 1e-3
        signs = np.sign(sol.vector)
        assert (signs[:5] == signs[0]).all() and (signs[5:] == signs[5]).all()
        assert signs[0] != signs[5]

    def test_complete_graph_spectrum(self):
        n = 4
        w = np.ones((n, n)) - np.eye(n)
        graph = graph_from_dense(w)
        sol = solve_fiedler(graph, np.arange(n), CFG)
        lam_oracle, _ = oracles.dense_generalized_fiedler(w)
        assert lam_oracle == pytest.approx(n / (n - 1), abs=1e-12)
        assert sol.eigenvalue == pytest.approx(n / (n - 1), abs=1e-9)

    def test_disconnected_gives_zero_and_componentwise_constant(self):
        w = np.zeros((6, 6))
        w[:3, :3] = 1.0
        w[3:, 3:] = 1.0
        np.fill_diagonal(w, 0.0)
        graph = graph_from_dense(w)
        sol = solve_fiedler(graph, np.arange(6), CFG)
        assert sol.eigenvalue == pytest.approx(0.0, abs=1e-12)
        v = sol.vector
        assert np.ptp(v[:3]) < 1e-9 and np.ptp(v[3:]) < 1e-9

    def test_residual_bound(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            w = oracles.random_connected_graph(rng, int(rng.integers(4, 11)))
            graph = graph_from_dense(w)
            sol = solve_fiedler(graph, np.arange(w.shape[0]), CFG)
            deg = w.sum(axis=1)
            cx = deg * sol.vector
            assert sol.residual <= 1e-8 * np.linalg.norm(cx)

    def test_isolated_node_rejected(self):
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 0] = 1.0
        graph = graph_from_dense(w)
        with pytest.raises(ValidationError, match="isolated"):
            solve_fiedler(graph, np.arange(3), CFG)


class TestSplitSegment:
    def test_bimodal_vector_splits_between_modes(self):
        w = two_cliques(5, 1e-4)
        graph = graph_from_dense(w)
        v = np.array([-1.0] * 5 + [1.0] * 5)
        a, b, cost = split_segment(graph, np.arange(10), v, CFG)
        parts = {frozenset(a.tolist()), frozenset(b.tolist())}
        assert parts == {frozenset(range(5)), frozenset(range(5, 10))}
        assert cost == pytest.approx(oracles.ncut_cost(w, np.arange(10) < 5), rel=1e-9)

    def test_six_node_exhaustive(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            w = oracles.random_connected_graph(rng, 6)
            graph = graph_from_dense(w)
            sol = solve_fiedler(graph, np.arange(6), CFG)
            a, b, cost = split_segment(graph, np.arange(6), sol.vector, CFG)
            best_cost, best_mask = oracles.best_threshold_cut(w, sol.vector)
            got = {frozenset(a.tolist()), frozenset(b.tolist())}
            want = {
                frozenset(np.nonzero(best_mask)[0].tolist()),
                frozenset(np.nonzero(~best_mask)[0].tolist()),
            }
            assert got == want
            assert cost == pytest.approx(best_cost, rel=1e-9)

    def test_uniform_vector_has_no_split(self):
        w = two_cliques(3, 1e-3)
        graph = graph_from_dense(w)
        with pytest.raises(NoValidSplitError):
            split_segment(graph, np.arange(6), np.zeros(6), CFG)

    def test_quantile_candidates_cover_bimodal(self):
        w = two_cliques(5, 1e-4)
        graph = graph_from_dense(w)
        cfg = NCutConfig(
            downsample=(8, 8), radius=3, beta=10.0, histogram_bins=8, exhaustive_split=False
        )
        v = np.array([-1.0] * 5 + [1.0] * 5)
        a, b, _ = split_segment(graph, np.arange(10), v, cfg)
        assert {frozenset(a.tolist()), frozenset(b.tolist())} == {
            frozenset(range(5)),
            frozenset(range(5, 10)),
        }

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        w = oracles.random_connected_graph(rng, 8)
        graph = graph_from_dense(w)
        sol = solve_fiedler(graph, np.arange(8), CFG)
        a1, b1, c1 = split_segment(graph, np.arange(8), sol.vector, CFG)

        scaled = graph_from_dense(w * 3.7)
        sol2 = solve_fiedler(scaled, np.arange(8), CFG)
        corr = abs(np.dot(sol.vector, sol2.vector)) / (
            np.linalg.norm(sol.vector) * np.linalg.norm(sol2.vector)
        )
        assert corr == pytest.approx(1.0, abs=1e-6)
        a2, b2, c2 = split_segment(scaled, np.arange(8), sol2.vector, CFG)
        assert {frozenset(a1.tolist()), frozenset(b1.tolist())} == {
            frozenset(a2.tolist()),
            frozenset(b2.tolist()),
        }
        assert c1 == pytest.approx(c2, rel=1e-9)


class TestStability:
    def test_bimodal_is_stable(self):
        v = np.concatenate([np.full(50, -1.0), np.full(50, 1.0)])
        assert stability_check(v, CFG)

    def test_uniform_spread_is_unstable(self):
        v = np.linspace(-1, 1, 2000)
        assert not stability_check(v, CFG)

    def test_constant_vector_unstable(self):
        assert not stability_check(np.zeros(10), CFG)

    def test_matches_histogram_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            v = rng.normal(size=200)
            hist, _ = np.histogram(v, bins=CFG.histogram_bins, range=(v.min(), v.max()))
            expected = hist.min() / hist.max() < CFG.stability_ratio_threshold
            assert stability_check(v, CFG) == expected


class TestDelineate:
    def test_two_blobs_weak_bottleneck(self):
        w = two_cliques(6, 1e-5)
        graph = graph_from_dense(w)
        cfg = NCutConfig(
            downsample=(12, 1),
            radius=1,
            beta=1.0,
            cut_cost_threshold=0.1,
            stability_ratio_threshold=0.06,
            min_instance_size=2,
            exhaustive_split=True,
        )
        result = delineate(graph, np.arange(12), cfg)
        parts = {frozenset(i.tolist()) for i in result.instances}
        assert parts == {frozenset(range(6)), frozenset(range(6, 12))}

    def test_homogeneous_graph_single_instance(self):
        n = 10
        w = np.ones((n, n)) - np.eye(n)
        graph = graph_from_dense(w)
        result = delineate(graph, np.arange(n), CFG)
        assert len(result.instances) == 1
        # cutting a complete graph costs ~ n/(n-1), far above the threshold
        assert len(result.dropped) == 0

    def test_boundary_ring_with_gap_still_two(self):
        # two cells separated by a painted line with a small hole in it
        soft = np.full((10, 21), 0.02, np.float32)
        soft[:, 10] = 0.95
        soft[4, 10] = 0.02  # the gap
        cfg = NCutConfig(
            downsample=(21, 10),
            radius=2,
            beta=8.0,
            cut_cost_threshold=0.1,
            stability_ratio_threshold=0.06,
            histogram_bins=20,
            min_instance_size=8,
            exhaustive_split=True,
        )
        graph = build_affinity(DenseMap(soft), cfg)
        nodes = np.arange(10 * 21)
        result = delineate(graph, nodes, cfg)
        big = [set(i.tolist()) for i in result.instances if len(i) >= 8]
        assert len(big) == 2
        cols = [{n % 21 for n in part} for part in big]
        left = min(cols, key=lambda c: min(c))
        right = max(cols, key=lambda c: max(c))
        assert max(left) <= 10 and min(right) >= 10

    def test_min_size_drops(self):
        w = two_cliques(3, 1e-5)
        graph = graph_from_dense(w)
        cfg = NCutConfig(
            downsample=(6, 1),
            radius=1,
            beta=1.0,
            cut_cost_threshold=0.5,
            stability_ratio_threshold=0.06,
            min_instance_size=4,
            exhaustive_split=True,
        )
        result = delineate(graph, np.arange(6), cfg)
        assert not result.instances
        assert sorted(np.concatenate(result.dropped).tolist()) == list(range(6))

    def test_partition_covers_input(self):
        rng = np.random.default_rng(5)
        w = oracles.random_connected_graph(rng, 10)
        graph = graph_from_dense(w)
        result = delineate(graph, np.arange(10), CFG)
        all_nodes = sorted(
            n for part in result.instances for n in part.tolist()
        ) + sorted(result.dropped_nodes().tolist())
        assert sorted(all_nodes) == list(range(10))
        flat = [n for part in result.instances for n in part.tolist()]
        assert len(flat) == len(set(flat))


class TestUpsample:
    def test_identity_when_sizes_match(self):
        mask = np.zeros((4, 4), bool)
        mask[1:3, 1:3] = True
        nodes = segment_to_nodes(mask, (4, 4))
        lab = upsample_instances([nodes], (4, 4), (4, 4), mask)
        assert (lab[mask] == 0).all()
        assert (lab[~mask] == -1).all()

    def test_two_x_block_upsample(self):
        mask = np.ones((4, 4), bool)
        left = np.array([0, 2])  # nodes (0,0) and (1,0) of the 2x2 grid
        right = np.array([1, 3])
        lab = upsample_instances([left, right], (2, 2), (4, 4), mask)
        assert (lab[:, :2] == 0).all()
        assert (lab[:, 2:] == 1).all()

    def test_matches_index_arithmetic_oracle(self):
        rng = np.random.default_rng(6)
        hb, wb, h, w = 3, 5, 7, 11
        mask = rng.random((h, w)) > 0.3
        node_ids = np.arange(hb * wb)
        rng.shuffle(node_ids)
        instances = [node_ids[:5], node_ids[5:9]]
        lab = upsample_instances(instances, (hb, wb), (h, w), mask)
        for y in range(h):
            for x in range(w):
                if not mask[y, x]:
                    assert lab[y, x] == -1
                    continue
                node = (y * hb // h) * wb + (x * wb // w)
                if node in instances[0]:
                    assert lab[y, x] == 0
                elif node in instances[1]:
                    assert lab[y, x] == 1
                else:
                    assert lab[y, x] == -2

    def test_dropped_cells_become_ignore(self):
        mask = np.ones((4, 4), bool)
        lab = upsample_instances([np.array([0])], (2, 2), (4, 4), mask)
        assert (lab[:2, :2] == 0).all()
        assert (lab[2:, :] == -2).all() and (lab[:2, 2:] == -2).all()


class TestConfig:
    def test_invalid_configs_rejected(self):
        with pytest.raises(ValidationError):
            NCutConfig(radius=0)
        with pytest.raises(ValidationError):
            NCutConfig(beta=0.0)
        with pytest.raises(ValidationError):
            NCutConfig(stability_ratio_threshold=1.5)
        with pytest.raises(ValidationError):
            NCutConfig(histogram_bins=1)
        with pytest.raises(ValidationError):
            NCutConfig(downsample=(0, 4))
