import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sbmcluster import HardClustering, RngSpec, SimpleGraph
from sbmcluster.graphgen import (_decode_triangle, average_path_length, global_clustering,
                                 graph_stats, regenerate, triangle_count)
from sbmcluster.model import BlockModelSummary, pair_counts

from conftest import random_graph


def summary(sizes, p):
    sizes = np.asarray(sizes)
    return BlockModelSummary(len(sizes), sizes, np.asarray(p, dtype=float),
                             np.repeat(np.arange(len(sizes)), sizes))


def brute_gcc(g: SimpleGraph):
    adj = [set(g.neighbors(v).tolist()) for v in range(g.n)]
    tri = sum(1 for a, b, c in itertools.combinations(range(g.n), 3)
              if b in adj[a] and c in adj[a] and c in adj[b])
    wedges = sum(len(s) * (len(s) - 1) // 2 for s in adj)
    return 3 * tri / wedges if wedges else 0.0


def to_nx(g):
    h = nx.Graph()
    h.add_nodes_from(range(g.n))
    h.add_edges_from(zip(*[a.tolist() for a in g.edges()]))
    return h


class TestDecode:
    def test_enumeration_order(self):
        a, b = _decode_triangle(np.arange(10))
        assert list(zip(a.tolist(), b.tolist())) == [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3),
                                                     (0, 4), (1, 4), (2, 4), (3, 4)]

    @given(st.integers(2, 3 * 10**7))
    def test_large_indices(self, s):
        idx = np.array([0, s * (s - 1) // 2 - 1, (s * (s - 1) // 2) // 3])
        a, b = _decode_triangle(idx)
        assert np.all(a < b) and np.all(b < s) and np.all(a >= 0)
        assert np.array_equal(b * (b - 1) // 2 + a, idx)


class TestRegenerate:
    def test_zero_probabilities(self):
        g = regenerate(summary([4, 3], np.zeros((2, 2))), RngSpec(0))
        assert g.n == 7 and g.m == 0

    def test_complete(self):
        g = regenerate(summary([6], [[1.0]]), RngSpec(0))
        assert g.m == 15
        g.check()

    def test_block_counts_statistics(self):
        p = np.array([[0.5, 0.1], [0.1, 0.5]])
        s = summary([50, 50], p)
        D = pair_counts(s.sizes)
        counts = []
        for gen in range(200):
            g = regenerate(s, RngSpec(1), generation=gen)
            c = HardClustering.from_assignment(g, s.assignment, 2)
            counts.append([c.block_edges[0, 0], c.block_edges[0, 1], c.block_edges[1, 1]])
        counts = np.asarray(counts, dtype=float)
        for col, (i, j) in enumerate([(0, 0), (0, 1), (1, 1)]):
            mean, var = D[i, j] * p[i, j], D[i, j] * p[i, j] * (1 - p[i, j])
            assert abs(counts[:, col].mean() - mean) <= 3 * math.sqrt(var / 200)

    @given(st.integers(0, 2**32 - 1))
    def test_simple_and_sizes_preserved(self, seed):
        g0 = np.random.default_rng(seed)
        k = int(g0.integers(1, 5))
        sizes = g0.integers(0, 12, k)
        p = g0.random((k, k))
        p = (p + p.T) / 2
        z = g0.permutation(np.repeat(np.arange(k), sizes))
        s = BlockModelSummary(k, sizes, p, z)
        g = regenerate(s, RngSpec(seed))
        g.check()
        assert g.n == sizes.sum()
        c = HardClustering.from_assignment(g, z, k)
        assert np.array_equal(c.sizes, sizes)
        assert np.all(c.block_edges <= c.pair_counts)

    def test_thread_invariance(self):
        g = random_graph(np.random.default_rng(3), 300, 0.05)
        c = HardClustering.from_assignment(g, np.random.default_rng(3).integers(0, 20, 300), 20)
        s = BlockModelSummary.from_clustering(c)
        outs = [regenerate(s, RngSpec(5), 2, threads=t) for t in (1, 4, None)]
        for o in outs[1:]:
            assert np.array_equal(o.indices, outs[0].indices)

    def test_reproducible_and_generation_dependent(self):
        s = summary([30, 30], [[0.3, 0.05], [0.05, 0.3]])
        a, b, c = regenerate(s, RngSpec(1), 0), regenerate(s, RngSpec(1), 0), regenerate(s, RngSpec(1), 1)
        assert np.array_equal(a.indices, b.indices)
        assert not np.array_equal(a.indices, c.indices)


class TestStats:
    def test_triangle(self):
        g = SimpleGraph.from_edges(3, [0, 1, 0], [1, 2, 2])
        st_ = graph_stats(g)
        assert st_.gcc == 1.0 and st_.apl == 1.0 and st_.degree_histogram == {2: 3}

    def test_path(self):
        g = SimpleGraph.from_edges(4, [0, 1, 2], [1, 2, 3])
        st_ = graph_stats(g)
        assert st_.gcc == 0.0
        assert st_.apl == pytest.approx(10 / 6)
        assert st_.apl_exact and st_.apl_se == 0.0

    def test_star(self):
        g = SimpleGraph.from_edges(6, [0] * 5, [1, 2, 3, 4, 5])
        st_ = graph_stats(g)
        assert st_.gcc == 0.0 and st_.degree_histogram == {1: 5, 5: 1}

    def test_gcc_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            n = int(rng.integers(3, 51))
            g = random_graph(rng, n, rng.uniform(0.02, 0.7))
            assert global_clustering(g) == pytest.approx(brute_gcc(g), abs=1e-12)
            assert triangle_count(g) == sum(nx.triangles(to_nx(g)).values()) // 3

    def test_apl_exact_against_networkx(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            g = random_graph(rng, 80, 0.04)
            h = to_nx(g)
            lcc = h.subgraph(max(nx.connected_components(h), key=len))
            apl, se, exact, size = average_path_length(g, sources=10)
            assert exact and se == 0.0 and size == lcc.number_of_nodes()
            if size > 1:
                assert apl == pytest.approx(nx.average_shortest_path_length(lcc), rel=1e-12)

    def test_sampled_apl_on_large_component(self):
        g = random_graph(np.random.default_rng(2), 2500, 0.003)
        apl, se, exact, size = average_path_length(g, sources=300, rng=RngSpec(0))
        full, _, _, _ = average_path_length(g, sources=size)
        assert not exact and size > 2000
        assert 0 < se < 0.05 * apl
        assert abs(apl - full) < 4 * se + 1e-12

    def test_histogram_sums_to_n(self):
        g = random_graph(np.random.default_rng(4), 40, 0.1)
        st_ = graph_stats(g)
        assert sum(st_.degree_histogram.values()) == 40
        assert 0 <= st_.gcc <= 1
        d = st_.to_dict()
        assert d["n"] == 40 and set(d["degree_histogram"]) == {str(k) for k in st_.degree_histogram}

    def test_empty_graph(self):
        st_ = graph_stats(SimpleGraph.from_edges(3, [], []))
        assert st_.gcc == 0.0 and math.isnan(st_.apl)
        assert st_.to_dict()["apl"] is None
