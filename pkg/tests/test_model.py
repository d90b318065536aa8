import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sbmcluster import (HardClustering, RatingDataset, SimpleGraph, SoftModel, entropy_term_f,
                        hard_entropy, soft_entropy)
from sbmcluster.model import BlockModelSummary, InfiniteEntropy

from conftest import random_graph


def f_oracle(x, y):
    mpmath.mp.dps = 50
    x, y = mpmath.mpf(x), mpmath.mpf(y)

    def xlx(t):
        return t * mpmath.log(t) if t > 0 else mpmath.mpf(0)

    return float(xlx(x + y) - xlx(x) - xlx(y))


class TestEntropyTerm:
    def test_one_one(self):
        assert entropy_term_f(1, 1) == pytest.approx(2 * math.log(2), abs=1e-12)
        assert entropy_term_f(1, 1) == pytest.approx(1.386294, abs=1e-6)

    def test_zero_argument(self):
        assert entropy_term_f(5, 0) == 0.0
        assert entropy_term_f(0, 5) == 0.0
        assert entropy_term_f(0, 0) == 0.0

    def test_three_seven_against_mpmath(self):
        assert entropy_term_f(3, 7) == pytest.approx(f_oracle(3, 7), rel=1e-14)

    def test_negative_raises(self):
        with pytest.raises(ValueError):
            entropy_term_f(-1, 2)
        with pytest.raises(ValueError):
            entropy_term_f(np.array([1.0, 2.0]), np.array([1.0, -0.5]))

    def test_vectorised(self):
        out = entropy_term_f(np.array([1, 3, 0]), np.array([1, 7, 4]))
        assert out.shape == (3,)
        assert out[2] == 0.0

    def test_large_counts_keep_precision(self):
        # a differences-of-big-terms formula would lose most digits here
        x, y = 3.0, 1e9
        assert entropy_term_f(x, y) == pytest.approx(f_oracle(x, y), rel=1e-12)

    @given(st.integers(0, 10**9), st.integers(0, 10**9))
    def test_symmetric_nonnegative(self, x, y):
        a, b = entropy_term_f(x, y), entropy_term_f(y, x)
        assert a == pytest.approx(b, rel=1e-12)
        assert a >= 0
        assert (a == 0) == (x == 0 or y == 0)

    @given(st.integers(1, 10**6))
    def test_equal_counts_bound(self, x):
        # f(x, x) = 2x ln 2 exactly
        assert entropy_term_f(x, x) <= 2 * x * math.log(2) * (1 + 1e-12)

    @given(st.integers(0, 10**4), st.integers(0, 10**4))
    def test_matches_oracle(self, x, y):
        assert entropy_term_f(x, y) == pytest.approx(f_oracle(x, y), rel=1e-12, abs=1e-12)


class TestSimpleGraph:
    def test_loops_and_duplicates(self):
        g = SimpleGraph.from_edges(3, [0, 1, 1, 2], [0, 2, 2, 1])
        assert g.m == 1
        g.check()
        assert g.degrees.tolist() == [0, 1, 1]

    def test_adjacency_sorted_symmetric(self, np_rng):
        g = random_graph(np_rng, 30, 0.2)
        g.check()
        assert g.degrees.sum() == 2 * g.m
        u, v = g.edges()
        assert np.all(u < v) and u.size == g.m

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            SimpleGraph.from_edges(2, [0], [2])


class TestRatingDataset:
    def test_duplicate_pair_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            RatingDataset(2, 2, [1, 2], [0, 0], [1, 1], [0, 1])

    def test_rating_index_range(self):
        with pytest.raises(ValueError):
            RatingDataset(1, 1, [1, 2], [0], [0], [2])

    def test_subset_keeps_index_space(self):
        d = RatingDataset(3, 2, [1, 5], [0, 1, 2], [0, 1, 0], [0, 1, 1])
        s = d.subset([2])
        assert (s.n_users, s.n_items, len(s)) == (3, 2, 1)
        assert s.values.tolist() == [5.0]


def brute_hard_entropy(g: SimpleGraph, z, k):
    """Count every vertex pair directly and sum f over blocks i <= j."""
    edges = set(zip(*[a.tolist() for a in g.edges()]))
    d = np.zeros((k, k))
    D = np.zeros((k, k))
    for u, v in itertools.combinations(range(g.n), 2):
        i, j = sorted((z[u], z[v]))
        D[i, j] += 1
        d[i, j] += (u, v) in edges
    total = 0.0
    for i in range(k):
        for j in range(i, k):
            total += f_oracle(d[i, j], D[i, j] - d[i, j])
    return total


class TestHardEntropy:
    def test_empty_graph(self):
        g = SimpleGraph.from_edges(6, [], [])
        c = HardClustering.from_assignment(g, [0, 1, 2, 0, 1, 2], 3)
        assert hard_entropy(c) == 0.0

    def test_complete_graph_one_cluster(self):
        iu, ju = np.triu_indices(4, 1)
        g = SimpleGraph.from_edges(4, iu, ju)
        assert hard_entropy(HardClustering.from_assignment(g, np.zeros(4, int), 1)) == 0.0

    def test_path_p4(self):
        g = SimpleGraph.from_edges(4, [0, 1, 2], [1, 2, 3])
        z = [0, 0, 1, 1]
        c = HardClustering.from_assignment(g, z, 2)
        # blocks: (0,0) d=1 D=1, (1,1) d=1 D=1, (0,1) d=1 D=4
        assert c.block_edges.tolist() == [[1, 1], [1, 1]]
        expected = brute_hard_entropy(g, z, 2)
        assert expected == pytest.approx(f_oracle(1, 3))
        assert hard_entropy(c) == pytest.approx(expected, abs=1e-12)

    def test_cached_equals_recount(self, np_rng):
        for _ in range(100):
            n = int(np_rng.integers(2, 31))
            k = int(np_rng.integers(1, 6))
            g = random_graph(np_rng, n, np_rng.uniform(0.05, 0.6))
            z = np_rng.integers(0, k, size=n)
            c = HardClustering.from_assignment(g, z, k)
            c.check(g)
            assert hard_entropy(c) == pytest.approx(brute_hard_entropy(g, z, k), abs=1e-9)

    def test_relabel_invariance(self, np_rng):
        for _ in range(30):
            g = random_graph(np_rng, 25, 0.2)
            k = 4
            z = np_rng.integers(0, k, size=g.n)
            perm = np_rng.permutation(k)
            a = hard_entropy(HardClustering.from_assignment(g, z, k))
            b = hard_entropy(HardClustering.from_assignment(g, perm[z], k))
            assert a == pytest.approx(b, abs=1e-9)

    def test_summary_probabilities(self, np_rng):
        g = random_graph(np_rng, 20, 0.3)
        c = HardClustering.from_assignment(g, np_rng.integers(0, 3, size=20), 3)
        s = BlockModelSummary.from_clustering(c)
        assert np.all((s.probabilities >= 0) & (s.probabilities <= 1))
        assert np.allclose(s.probabilities, s.probabilities.T)


def brute_soft_entropy(model: SoftModel, data: RatingDataset):
    total = 0.0
    for u, v, r in zip(data.users, data.items, data.ratings):
        inner = sum(model.h_users[u, i] * model.h_items[v, j] * model.theta[i, j, r]
                    for i in range(model.k) for j in range(model.l))
        total -= math.log(inner)
    return total


def random_soft_model(rng, nu, nv, k, l, R):
    return SoftModel(rng.dirichlet(np.ones(k), nu), rng.dirichlet(np.ones(l), nv),
                     rng.dirichlet(np.ones(R), (k, l)))


class TestSoftEntropy:
    def test_certain_observation(self):
        d = RatingDataset(1, 1, [1, 2], [0], [0], [1])
        m = SoftModel(np.ones((1, 1)), np.ones((1, 1)), np.array([[[0.0, 1.0]]]))
        assert soft_entropy(m, d) == 0.0

    def test_half(self):
        d = RatingDataset(1, 1, [1, 2], [0], [0], [1])
        m = SoftModel(np.ones((1, 1)), np.ones((1, 1)), np.array([[[0.5, 0.5]]]))
        assert soft_entropy(m, d) == pytest.approx(math.log(2))

    def test_three_observations_oracle(self, np_rng):
        d = RatingDataset(2, 2, [1, 2, 3], [0, 1, 1], [0, 0, 1], [0, 2, 1])
        m = random_soft_model(np_rng, 2, 2, 2, 2, 3)
        assert soft_entropy(m, d) == pytest.approx(brute_soft_entropy(m, d), rel=1e-12)

    def test_impossible_observation_flagged(self):
        d = RatingDataset(1, 2, [1, 2], [0, 0], [0, 1], [0, 1])
        m = SoftModel(np.ones((1, 1)), np.ones((2, 1)), np.array([[[1.0, 0.0]]]))
        s = soft_entropy(m, d)
        assert math.isinf(s)
        assert isinstance(s, InfiniteEntropy) and s.observation == 1

    def test_permutation_invariance(self, np_rng):
        from conftest import random_ratings

        d = random_ratings(np_rng, 8, 7, 30)
        m = random_soft_model(np_rng, 8, 7, 3, 4, 5)
        p, q = np_rng.permutation(3), np_rng.permutation(4)
        mp = SoftModel(m.h_users[:, p], m.h_items[:, q], m.theta[p][:, q])
        assert soft_entropy(m, d) == pytest.approx(soft_entropy(mp, d), rel=1e-12)

    def test_simplex_check(self):
        m = SoftModel(np.array([[0.5, 0.6]]), np.ones((1, 1)), np.ones((2, 1, 1)))
        with pytest.raises(ValueError):
            m.check()
