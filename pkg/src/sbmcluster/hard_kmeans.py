"""Generalized k-means: batch local search for hard block-model clusterings.

Each iteration samples an ``alpha`` fraction of the vertices, finds each
sampled vertex's best cluster against statistics frozen at the start of
the iteration, applies every planned move at once and rebuilds the
statistics. Small ``alpha`` keeps the frozen statistics close to the truth
while the batch is applied.

Two objectives are supported: the Bernoulli entropy of a simple graph and
the multinomial entropy of a bipartite rating matrix.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from sbmcluster._parallel import map_chunks
from sbmcluster.model import HardClustering, RatingDataset, SimpleGraph, _f, hard_entropy
from sbmcluster.rng import RngSpec

STREAM_INIT = 10
STREAM_SAMPLE = 11
STREAM_SAMPLE_ITEMS = 12

#: moves must improve the entropy by more than this to count
MOVE_TOL = 1e-9


@dataclass
class HardFitConfig:
    k: int
    l: int | None = None
    alpha: float = 0.1
    max_iterations: int = 300
    convergence_tol: float = 1e-7
    patience: int | None = None
    time_budget: float | None = None
    rng: RngSpec = field(default_factory=RngSpec)
    threads: int | None = None
    chunk_size: int = 2048

    def __post_init__(self):
        if self.k < 1 or (self.l is not None and self.l < 1):
            raise ValueError("k (and l) must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ValueError("time_budget must be positive")

    @property
    def stall_limit(self) -> int:
        """Consecutive sub-tolerance iterations before a full local-optimality check."""
        return self.patience if self.patience is not None else math.ceil(1 / self.alpha)

    def out_of_time(self, start: float) -> bool:
        return self.time_budget is not None and time.perf_counter() - start >= self.time_budget


class TracePoint(NamedTuple):
    iteration: int
    entropy: float
    elapsed: float


def _rel_change(prev: float, cur: float) -> float:
    if prev == cur:
        return 0.0
    return abs(prev - cur) / max(abs(prev), 1e-300)


# ---------------------------------------------------------------------------
# simple graphs


@dataclass(eq=False)
class MoveDeltaTables:
    """Insertion/removal tables for the isolated-vertex approximation.

    ``a[i, j]`` is the entropy change of block ``(i, j)`` when a vertex with
    no edges joins ``V_i``; ``b[i, j]`` is the change removed when such a
    vertex leaves ``V_i`` (the diagonal uses ``|V_i|`` and is corrected per
    vertex). ``x_*`` hold the per-vertex neighbor counts by cluster in CSR
    form: vertex ``v`` has entries ``x_ptr[v]:x_ptr[v+1]``.
    """

    clustering: HardClustering
    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    x_ptr: np.ndarray
    x_cluster: np.ndarray
    x_count: np.ndarray

    def neighbor_counts(self, v: int) -> dict[int, int]:
        sl = slice(self.x_ptr[v], self.x_ptr[v + 1])
        return dict(zip(self.x_cluster[sl].tolist(), self.x_count[sl].tolist()))


def rebuild_tables(c: HardClustering, g: SimpleGraph) -> MoveDeltaTables:
    """Recompute the move tables from ``c``; O(m log m + k^2)."""
    k = c.k
    d = c.block_edges.astype(np.float64)
    dp = c.non_edges.astype(np.float64)
    s = c.sizes.astype(np.float64)[None, :]
    base = _f(d, dp)
    a = _f(d, dp + s) - base
    b = base - _f(d, dp - s)
    src = np.repeat(np.arange(g.n, dtype=np.int64), g.degrees)
    key, cnt = np.unique(src * k + c.assignment[g.indices], return_counts=True)
    xv = key // k
    x_ptr = np.zeros(g.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(xv, minlength=g.n), out=x_ptr[1:])
    return MoveDeltaTables(c, a, b, a.sum(axis=1), b.sum(axis=1), x_ptr,
                           (key % k).astype(np.int64), cnt.astype(np.int64))


def _move_deltas(t: MoveDeltaTables, vertices: np.ndarray) -> np.ndarray:
    """``S(succ(Z, v, target)) - S(Z)`` for every sampled ``v`` and every target.

    The isolated-vertex tables give every block a vertex has no edges to;
    the blocks touching its own cluster or a neighbor cluster are
    recomputed exactly. Only the block ``(target, source)`` needs a dense
    pass; the other corrections live on the vertex's neighbor clusters.
    """
    c = t.clustering
    k = c.k
    d = c.block_edges.astype(np.float64)
    dp = c.non_edges.astype(np.float64)
    s = c.sizes.astype(np.float64)
    P = vertices.size
    src = c.assignment[vertices]
    rows = np.arange(P)

    # sparse neighbor counts (owner row, cluster, count) for the sampled vertices
    starts, stops = t.x_ptr[vertices], t.x_ptr[vertices + 1]
    lens = stops - starts
    owner = np.repeat(rows, lens)
    flat = (np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens) + np.repeat(starts, lens)).astype(np.int64)
    cj = t.x_cluster[flat]
    xj = t.x_count[flat].astype(np.float64)
    osrc = src[owner]
    xa = np.zeros(P)
    same = cj == osrc
    xa[owner[same]] = xj[same]
    sa = s[src]

    # removal from the source cluster (same for every target)
    diag_rem = _f(d[src, src] - xa, dp[src, src] - (sa - 1 - xa)) - _f(d[src, src], dp[src, src])
    other = ~same
    po, jo, xo = owner[other], cj[other], xj[other]
    so = osrc[other]
    rem_nb = t.b[so, jo] + _f(d[so, jo] - xo, dp[so, jo] - (s[jo] - xo)) - _f(d[so, jo], dp[so, jo])
    rem = -t.B[src] + t.b[src, src] + diag_rem + np.bincount(po, rem_nb, minlength=P)

    delta = t.A[None, :] + rem[:, None]

    # insertion: block (target, source), altered by the removal
    dta, dpta = d[:, src].T, dp[:, src].T
    X_src = np.zeros((P, k))
    X_src[po, jo] = xo
    r_d = dta - X_src
    r_dp = dpta - (s[None, :] - X_src)
    delta += _f(r_d + xa[:, None], r_dp + (sa - 1 - xa)[:, None]) - _f(r_d, r_dp) - t.a[:, src].T

    # insertion diagonal: block (j, j) when the target is neighbor cluster j
    dtt, dptt = np.diag(d)[jo], np.diag(dp)[jo]
    delta[po, jo] += _f(dtt + xo, dptt + s[jo] - xo) - _f(dtt, dptt) - t.a[jo, jo]

    # insertion: blocks (target, j) for neighbor clusters j other than the source
    if po.size:
        dj, dpj = d[:, jo].T, dp[:, jo].T
        corr = _f(dj + xo[:, None], dpj + (s[jo] - xo)[:, None]) - _f(dj, dpj) - t.a[:, jo].T
        corr[np.arange(po.size), jo] = 0.0  # target == j is the diagonal term above
        np.add.at(delta, po, corr)

    delta[rows, src] = 0.0
    return delta


def succ_entropy_delta(c: HardClustering, g: SimpleGraph, tables: MoveDeltaTables, v: int, target: int) -> float:
    """Entropy change of moving vertex ``v`` to cluster ``target``."""
    if not 0 <= target < c.k:
        raise ValueError(f"target cluster {target} outside [0, {c.k})")
    if tables.clustering is not c:
        raise ValueError("tables were built for a different clustering")
    return float(_move_deltas(tables, np.array([v], dtype=np.int64))[0, target])


def _choose(delta: np.ndarray, current: np.ndarray) -> np.ndarray:
    best = np.argmin(delta, axis=1)
    gain = delta[np.arange(delta.shape[0]), best]
    return np.where(gain < -MOVE_TOL, best, current)


def plan_moves(tables: MoveDeltaTables, vertices: np.ndarray, threads=None, chunk_size=2048) -> np.ndarray:
    """Best target of each vertex against the frozen tables (current cluster on ties)."""
    z = tables.clustering.assignment

    def work(lo, hi):
        vs = vertices[lo:hi]
        return _choose(_move_deltas(tables, vs), z[vs])

    parts = map_chunks(work, vertices.size, chunk_size, threads)
    return np.concatenate(parts) if parts else np.zeros(0, np.int64)


def apply_moves(c: HardClustering, g: SimpleGraph, vertices, targets) -> HardClustering:
    """New clustering with ``vertices`` reassigned, updating counts incrementally."""
    vertices = np.asarray(vertices, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    k = c.k
    z_new = c.assignment.copy()
    z_new[vertices] = targets
    sizes = c.sizes + np.bincount(targets, minlength=k) - np.bincount(c.assignment[vertices], minlength=k)
    moved = np.zeros(g.n, dtype=bool)
    moved[vertices[targets != c.assignment[vertices]]] = True
    block = c.block_edges.copy()
    if moved.any():
        u, v = g.edges()
        hit = moved[u] | moved[v]
        u, v = u[hit], v[hit]
        for z, sign in ((c.assignment, -1), (z_new, 1)):
            a, b = z[u], z[v]
            cnt = np.bincount(np.minimum(a, b) * k + np.maximum(a, b), minlength=k * k).reshape(k, k)
            sym = cnt + cnt.T
            sym[np.diag_indices(k)] = np.diag(cnt)
            block += sign * sym
    return HardClustering(k, z_new, sizes, block)


def check_locally_optimal(c: HardClustering, g: SimpleGraph) -> tuple[bool, tuple[int, int, float] | None]:
    """``(True, None)`` if no single move lowers the entropy by more than 1e-9.

    Otherwise returns ``(False, (vertex, target, delta))`` for the most
    improving move.
    """
    if c.k == 1 or g.n == 0:
        return True, None
    tables = rebuild_tables(c, g)
    delta = _move_deltas(tables, np.arange(g.n, dtype=np.int64))
    v, tgt = np.unravel_index(np.argmin(delta), delta.shape)
    if delta[v, tgt] < -MOVE_TOL:
        return False, (int(v), int(tgt), float(delta[v, tgt]))
    return True, None


def random_clustering(g: SimpleGraph, k: int, rng: RngSpec) -> HardClustering:
    z = rng.generator(STREAM_INIT).integers(0, k, size=g.n)
    return HardClustering.from_assignment(g, z, k)


def hard_fit_graph(g: SimpleGraph, cfg: HardFitConfig,
                   init: HardClustering | None = None) -> tuple[HardClustering, list[TracePoint]]:
    """Fit a hard SBM clustering of ``g`` with Generalized k-means.

    Stops at ``max_iterations``, at the time budget, or once the relative
    entropy change has stayed below ``convergence_tol`` for ``stall_limit``
    iterations and a full scan finds no improving single move. Returns the
    lowest-entropy clustering seen and the per-iteration trace (iteration 0
    is the random start).
    """
    start = time.perf_counter()
    c = init if init is not None else random_clustering(g, cfg.k, cfg.rng)
    S = hard_entropy(c)
    trace = [TracePoint(0, S, time.perf_counter() - start)]
    best, best_s = c, S
    n_sample = min(g.n, math.ceil(cfg.alpha * g.n))
    stalled = 0
    for it in range(1, cfg.max_iterations + 1):
        tables = rebuild_tables(c, g)
        sample = cfg.rng.generator(STREAM_SAMPLE, it).choice(g.n, size=n_sample, replace=False)
        targets = plan_moves(tables, sample, cfg.threads, cfg.chunk_size)
        c = apply_moves(c, g, sample, targets)
        S_new = hard_entropy(c)
        trace.append(TracePoint(it, S_new, time.perf_counter() - start))
        if S_new < best_s:
            best, best_s = c, S_new
        stalled = stalled + 1 if _rel_change(S, S_new) < cfg.convergence_tol else 0
        S = S_new
        if c.k == 1 or cfg.out_of_time(start):
            break
        if stalled >= cfg.stall_limit:
            # a quiet stretch can just mean the improving vertices were not sampled
            if check_locally_optimal(c, g)[0]:
                break
            stalled = 0
    return best, trace


# ---------------------------------------------------------------------------
# bipartite rating data


def _xlogx(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def _block_entropy(counts):
    """``sum_j (N ln N - sum_r n_r ln n_r)`` over the last axis, summed over block axis -2."""
    return (_xlogx(counts.sum(axis=-1)) - _xlogx(counts).sum(axis=-1)).sum(axis=-1)


@dataclass(eq=False)
class BipartiteHardModel:
    """Hard user/item clusterings with block rating histograms ``counts[i, j, r]``."""

    user_assignment: np.ndarray
    item_assignment: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_assignments(cls, data: RatingDataset, zu, zv, k: int, l: int) -> "BipartiteHardModel":
        zu = np.asarray(zu, dtype=np.int64)
        zv = np.asarray(zv, dtype=np.int64)
        R = data.n_ratings
        key = (zu[data.users] * l + zv[data.items]) * R + data.ratings
        counts = np.bincount(key, minlength=k * l * R).reshape(k, l, R).astype(np.int64)
        return cls(zu.copy(), zv.copy(), counts)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def l(self) -> int:
        return self.counts.shape[1]

    @property
    def block_totals(self) -> np.ndarray:
        return self.counts.sum(axis=2)

    def entropy(self) -> float:
        """``-sum n_ijr ln(n_ijr / n_ij)``; 0 ln 0 = 0."""
        return float(_block_entropy(self.counts.reshape(-1, 1, self.counts.shape[2])).sum())


def _side_deltas(counts: np.ndarray, hist: np.ndarray, src: np.ndarray) -> np.ndarray:
    """Entropy change of moving each entity (rows of ``hist``) to every cluster.

    ``counts`` is ``(k, l, R)`` with the moving side first; ``hist[p]`` is
    entity ``p``'s ``(l, R)`` rating histogram against the other side's
    clusters.
    """
    own = counts[src]
    before_src = _block_entropy(own)
    rem = _block_entropy(own - hist) - before_src
    before = _block_entropy(counts)
    added = _block_entropy(counts[None, :, :, :] + hist[:, None, :, :]) - before[None, :]
    delta = rem[:, None] + added
    delta[np.arange(src.size), src] = 0.0
    return delta


def _plan_side(counts, other_assign, obs_other, obs_r, order, ptr, sample, src_assign, l, R):
    rows = np.repeat(np.arange(sample.size), ptr[sample + 1] - ptr[sample])
    obs = order[np.concatenate([np.arange(ptr[e], ptr[e + 1]) for e in sample])] if sample.size else np.zeros(0, np.int64)
    hist = np.bincount((rows * l + other_assign[obs_other[obs]]) * R + obs_r[obs],
                       minlength=sample.size * l * R).reshape(sample.size, l, R)
    src = src_assign[sample]
    return _choose(_side_deltas(counts, hist, src), src)


def hard_fit_bipartite(data: RatingDataset, cfg: HardFitConfig) -> tuple[BipartiteHardModel, list[TracePoint]]:
    """Alternate Generalized k-means sweeps over users then items.

    Moves are scored with the exact multinomial entropy change computed from
    each entity's rating histogram.
    """
    k, l, R = cfg.k, cfg.l if cfg.l is not None else cfg.k, data.n_ratings
    start = time.perf_counter()
    gen = cfg.rng.generator(STREAM_INIT)
    zu = gen.integers(0, k, size=data.n_users)
    zv = gen.integers(0, l, size=data.n_items)
    model = BipartiteHardModel.from_assignments(data, zu, zv, k, l)
    S = model.entropy()
    trace = [TracePoint(0, S, time.perf_counter() - start)]
    best, best_s = model, S

    u_order = np.argsort(data.users, kind="stable")
    u_ptr = np.zeros(data.n_users + 1, dtype=np.int64)
    np.cumsum(np.bincount(data.users, minlength=data.n_users), out=u_ptr[1:])
    v_order = np.argsort(data.items, kind="stable")
    v_ptr = np.zeros(data.n_items + 1, dtype=np.int64)
    np.cumsum(np.bincount(data.items, minlength=data.n_items), out=v_ptr[1:])
    nu_s = min(data.n_users, math.ceil(cfg.alpha * data.n_users))
    nv_s = min(data.n_items, math.ceil(cfg.alpha * data.n_items))
    stalled = 0
    for it in range(1, cfg.max_iterations + 1):
        su = cfg.rng.generator(STREAM_SAMPLE, it).choice(data.n_users, size=nu_s, replace=False)
        new_u = _plan_side(model.counts, zv, data.items, data.ratings, u_order, u_ptr, su, zu, l, R)
        zu = zu.copy()
        zu[su] = new_u
        model = BipartiteHardModel.from_assignments(data, zu, zv, k, l)

        sv = cfg.rng.generator(STREAM_SAMPLE_ITEMS, it).choice(data.n_items, size=nv_s, replace=False)
        counts_t = model.counts.transpose(1, 0, 2)
        new_v = _plan_side(counts_t, zu, data.users, data.ratings, v_order, v_ptr, sv, zv, k, R)
        zv = zv.copy()
        zv[sv] = new_v
        model = BipartiteHardModel.from_assignments(data, zu, zv, k, l)

        S_new = model.entropy()
        trace.append(TracePoint(it, S_new, time.perf_counter() - start))
        if S_new < best_s:
            best, best_s = model, S_new
        stalled = stalled + 1 if _rel_change(S, S_new) < cfg.convergence_tol else 0
        S = S_new
        if (k == 1 and l == 1) or cfg.out_of_time(start):
            break
        if stalled >= cfg.stall_limit:
            all_u, all_v = np.arange(data.n_users), np.arange(data.n_items)
            still_u = _plan_side(model.counts, zv, data.items, data.ratings, u_order, u_ptr, all_u, zu, l, R)
            still_v = _plan_side(model.counts.transpose(1, 0, 2), zu, data.users, data.ratings,
                                 v_order, v_ptr, all_v, zv, k, R)
            if np.array_equal(still_u, zu) and np.array_equal(still_v, zv):
                break
            stalled = 0
    return best, trace
