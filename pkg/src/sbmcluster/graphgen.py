"""Regenerate graphs from a fitted block model and measure graph similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from sbmcluster._parallel import map_chunks
from sbmcluster.model import BlockModelSummary, SimpleGraph, pair_counts
from sbmcluster.rng import RngSpec

STREAM_REGEN = 20
STREAM_APL = 21

EXACT_APL_LIMIT = 2000


def _decode_triangle(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map ``0 <= idx < s(s-1)/2`` to pairs ``a < b`` enumerated by ``b`` then ``a``."""
    b = np.floor((1 + np.sqrt(1 + 8 * idx.astype(np.float64))) / 2).astype(np.int64)
    # float sqrt can land one off for idx ~ 1e15
    b -= b * (b - 1) // 2 > idx
    b += (b + 1) * b // 2 <= idx
    return idx - b * (b - 1) // 2, b


def _block_members(summary: BlockModelSummary) -> tuple[np.ndarray, list[np.ndarray]]:
    if summary.assignment is not None:
        z = np.asarray(summary.assignment, dtype=np.int64)
    else:
        z = np.repeat(np.arange(summary.k), summary.sizes)
    order = np.argsort(z, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(summary.sizes)])
    return z, [order[bounds[i]:bounds[i + 1]] for i in range(summary.k)]


def regenerate(summary: BlockModelSummary, rng: RngSpec, generation: int = 0,
               threads: int | None = None) -> SimpleGraph:
    """Sample a graph where each block pair is an independent Bernoulli(p_ij) edge.

    Per block pair, the edge count is drawn from Binomial(D_ij, p_ij) and
    that many distinct vertex pairs are chosen uniformly, so the expected
    cost is O(m + k^2). Block pair ``(i, j)`` of ``generation`` has its own
    random stream.
    """
    z, members = _block_members(summary)
    n = z.size
    D = pair_counts(summary.sizes)
    iu, ju = np.triu_indices(summary.k)
    pairs = [(i, j) for i, j in zip(iu.tolist(), ju.tolist())
             if D[i, j] > 0 and summary.probabilities[i, j] > 0]

    def work(lo, hi):
        us, vs = [], []
        for idx in range(lo, hi):
            i, j = pairs[idx]
            gen = rng.generator(STREAM_REGEN, generation, i * summary.k + j)
            total = int(D[i, j])
            cnt = int(gen.binomial(total, min(1.0, float(summary.probabilities[i, j]))))
            if cnt == 0:
                continue
            if cnt == total:
                pick = np.arange(total, dtype=np.int64)
            else:
                pick = gen.choice(total, size=cnt, replace=False, shuffle=False).astype(np.int64)
            if i == j:
                a, b = _decode_triangle(pick)
                us.append(members[i][a])
                vs.append(members[i][b])
            else:
                sj = members[j].size
                us.append(members[i][pick // sj])
                vs.append(members[j][pick % sj])
        if not us:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        return np.concatenate(us), np.concatenate(vs)

    parts = map_chunks(work, len(pairs), 64, threads)
    u = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, np.int64)
    v = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.int64)
    return SimpleGraph.from_edges(n, u, v)


@dataclass
class GraphStats:
    n: int
    m: int
    apl: float
    apl_se: float
    apl_exact: bool
    gcc: float
    degree_histogram: dict[int, int] = field(default_factory=dict)
    lcc_size: int = 0

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        return {
            "n": self.n, "m": self.m, "apl": clean(self.apl), "apl_se": clean(self.apl_se),
            "apl_exact": self.apl_exact, "gcc": self.gcc, "lcc_size": self.lcc_size,
            "degree_histogram": {str(d): c for d, c in sorted(self.degree_histogram.items())},
        }


def triangle_count(g: SimpleGraph) -> int:
    """Triangles via a degree-ordered orientation, so hubs are cheap."""
    if g.m == 0:
        return 0
    deg = g.degrees
    rank = np.empty(g.n, dtype=np.int64)
    rank[np.lexsort((np.arange(g.n), deg))] = np.arange(g.n)
    u, v = g.edges()
    fwd = rank[u] < rank[v]
    src = np.where(fwd, u, v)
    dst = np.where(fwd, v, u)
    L = csr_matrix((np.ones(src.size, dtype=np.int64), (src, dst)), shape=(g.n, g.n))
    return int((L @ L).multiply(L).sum())


def global_clustering(g: SimpleGraph) -> float:
    deg = g.degrees.astype(np.int64)
    wedges = int((deg * (deg - 1) // 2).sum())
    return 3.0 * triangle_count(g) / wedges if wedges else 0.0


def average_path_length(g: SimpleGraph, sources: int = 1000, rng: RngSpec | None = None,
                        threads: int | None = None) -> tuple[float, float, bool, int]:
    """APL over the largest connected component.

    Returns ``(apl, standard error, exact, component size)``. Exact (all
    sources) when the component has at most 2000 vertices or ``sources``
    covers it; otherwise BFS from a uniform sample of sources. The standard
    error includes the finite-population correction, so it is 0 when exact.
    """
    rng = rng or RngSpec()
    if g.n == 0:
        return math.nan, math.nan, True, 0
    ncomp, labels = connected_components(g.to_csr(), directed=False)
    sizes = np.bincount(labels)
    big = int(np.argmax(sizes))
    nodes = np.flatnonzero(labels == big)
    N = nodes.size
    if N < 2:
        return math.nan, math.nan, True, int(N)
    sub = g.to_csr()[nodes][:, nodes]
    exact = N <= EXACT_APL_LIMIT or sources >= N
    if exact:
        src = np.arange(N)
    else:
        src = np.sort(rng.generator(STREAM_APL).choice(N, size=sources, replace=False))

    def work(lo, hi):
        dist = shortest_path(sub, method="D", directed=False, unweighted=True, indices=src[lo:hi])
        return dist.sum(axis=1) / (N - 1)

    per_source = np.concatenate(map_chunks(work, src.size, 64, threads))
    apl = float(per_source.mean())
    if exact or per_source.size < 2:
        se = 0.0
    else:
        fpc = (N - per_source.size) / (N - 1)
        se = float(per_source.std(ddof=1) / math.sqrt(per_source.size) * math.sqrt(fpc))
    return apl, se, exact, int(N)


def graph_stats(g: SimpleGraph, apl_sources: int = 1000, rng: RngSpec | None = None,
                threads: int | None = None) -> GraphStats:
    """Degree histogram, global clustering coefficient and average path length."""
    deg, cnt = np.unique(g.degrees, return_counts=True)
    apl, se, exact, lcc = average_path_length(g, apl_sources, rng, threads)
    return GraphStats(g.n, g.m, apl, se, exact, global_clustering(g),
                      {int(d): int(c) for d, c in zip(deg, cnt)}, lcc)
