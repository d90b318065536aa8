"""Core data types and the entropy functions shared by every fitter.

All logarithms are natural. Counts are int64, entropies float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateModelError(ArithmeticError):
    """An observation has zero likelihood under the current soft model."""

    def __init__(self, observation: int, message: str | None = None):
        self.observation = int(observation)
        super().__init__(message or f"observation {observation} has zero likelihood under the model")


class InfiniteEntropy(float):
    """``+inf`` entropy that remembers which observation made it infinite."""

    def __new__(cls, observation: int):
        obj = super().__new__(cls, float("inf"))
        obj.observation = int(observation)
        return obj

    def __repr__(self):
        return f"InfiniteEntropy(observation={self.observation})"


# ---------------------------------------------------------------------------
# entropy primitive


def _f(x, y):
    """Unchecked vectorised ``(x+y)ln(x+y) - x ln x - y ln y``.

    Written as ``x ln(1 + y/x) + y ln(1 + x/y)`` so that differences of two
    large terms keep their precision when one argument is ~1e9.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pos = (x > 0) & (y > 0)
    xs = np.where(pos, x, 1.0)
    ys = np.where(pos, y, 1.0)
    out = xs * np.log1p(ys / xs) + ys * np.log1p(xs / ys)
    return np.where(pos, out, 0.0)


def entropy_term_f(x, y):
    """Bernoulli block entropy of ``x`` edges and ``y`` non-edges.

    Accepts scalars or arrays. Returns 0 whenever either count is 0.

    Raises
    ------
    ValueError
        If any argument is negative.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if np.any(xa < 0) or np.any(ya < 0):
        raise ValueError("entropy_term_f is only defined for nonnegative counts")
    out = _f(xa, ya)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True, eq=False)
class SimpleGraph:
    """Undirected simple graph stored as CSR arrays with sorted neighbor lists."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray | None = None

    @classmethod
    def from_edges(cls, n: int, u, v, labels=None) -> "SimpleGraph":
        """Build from endpoint arrays; self-loops are dropped and duplicates merged."""
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        if u.shape != v.shape:
            raise ValueError("endpoint arrays must have equal length")
        if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n):
            raise ValueError("edge endpoint out of range")
        keep = u != v
        a = np.minimum(u[keep], v[keep])
        b = np.maximum(u[keep], v[keep])
        key = np.unique(a * n + b)
        a, b = key // n, key % n
        src = np.concatenate([a, b])
        dst = np.concatenate([b, a])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(int(n), indptr, dst.astype(np.int64), labels)

    @property
    def m(self) -> int:
        return int(self.indices.size // 2)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @property
    def adjacency(self) -> list[np.ndarray]:
        return [self.neighbors(v) for v in range(self.n)]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Each undirected edge once, as ``(u, v)`` with ``u < v``."""
        src = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)
        mask = src < self.indices
        return src[mask], self.indices[mask]

    def to_csr(self):
        from scipy.sparse import csr_matrix

        data = np.ones(self.indices.size, dtype=np.int8)
        return csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def check(self) -> None:
        """Raise ``AssertionError`` unless symmetric, loop-free and sorted."""
        src = np.repeat(np.arange(self.n), self.degrees)
        assert not np.any(src == self.indices), "self-loop"
        fwd = set(zip(src.tolist(), self.indices.tolist()))
        assert len(fwd) == self.indices.size, "parallel edge"
        assert all((b, a) in fwd for a, b in fwd), "asymmetric adjacency"
        for v in range(self.n):
            nb = self.neighbors(v)
            assert np.all(np.diff(nb) > 0), "unsorted neighbor list"


# ---------------------------------------------------------------------------
# ratings


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Bipartite ``(user, item, rating-index)`` observations over an ordered alphabet."""

    n_users: int
    n_items: int
    alphabet: np.ndarray
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_labels: np.ndarray | None = None
    item_labels: np.ndarray | None = None

    def __post_init__(self):
        for name in ("users", "items", "ratings"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "alphabet", np.asarray(self.alphabet, dtype=np.float64))
        if not (self.users.shape == self.items.shape == self.ratings.shape):
            raise ValueError("observation arrays must have equal length")
        if self.users.size:
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise ValueError("user id out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise ValueError("item id out of range")
            if self.ratings.min() < 0 or self.ratings.max() >= self.alphabet.size:
                raise ValueError("rating index outside the alphabet")
            key = self.users * self.n_items + self.items
            if np.unique(key).size != key.size:
                raise ValueError("duplicate (user, item) observation")

    def __len__(self):
        return int(self.users.size)

    @property
    def n_ratings(self) -> int:
        return int(self.alphabet.size)

    @property
    def values(self) -> np.ndarray:
        """Observed rating values (not indices)."""
        return self.alphabet[self.ratings]

    def subset(self, idx) -> "RatingDataset":
        """Observations ``idx`` with the user/item/alphabet index spaces unchanged."""
        idx = np.asarray(idx, dtype=np.int64)
        return RatingDataset(self.n_users, self.n_items, self.alphabet,
                             self.users[idx], self.items[idx], self.ratings[idx],
                             self.user_labels, self.item_labels)


# ---------------------------------------------------------------------------
# soft model


@dataclass(eq=False)
class SoftModel:
    """Mixed memberships for users (``k``) and items (``l``) plus ``theta[i, j, r]``."""

    h_users: np.ndarray
    h_items: np.ndarray
    theta: np.ndarray

    @property
    def k(self) -> int:
        return self.h_users.shape[1]

    @property
    def l(self) -> int:
        return self.h_items.shape[1]

    def copy(self) -> "SoftModel":
        return SoftModel(self.h_users.copy(), self.h_items.copy(), self.theta.copy())

    def check(self, tol: float = 1e-9) -> None:
        """Raise ``ValueError`` if any row or theta slice leaves the simplex."""
        for name, arr in (("h_users", self.h_users), ("h_items", self.h_items), ("theta", self.theta)):
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            err = np.abs(arr.sum(axis=-1) - 1.0).max(initial=0.0)
            if err > tol:
                raise ValueError(f"{name} rows do not sum to 1 (max error {err:.3g})")


def _inner_likelihoods(model: SoftModel, data: RatingDataset, idx: np.ndarray | None = None) -> np.ndarray:
    """``sum_ij h[u,i] h[v,j] theta[i,j,r]`` for each observation."""
    users, items, ratings = data.users, data.items, data.ratings
    if idx is not None:
        users, items, ratings = users[idx], items[idx], ratings[idx]
    out = np.empty(users.size)
    for r in range(model.theta.shape[2]):
        rows = np.flatnonzero(ratings == r)
        if rows.size == 0:
            continue
        tmp = model.h_items[items[rows]] @ model.theta[:, :, r].T
        out[rows] = np.einsum("ei,ei->e", model.h_users[users[rows]], tmp)
    return out


def soft_entropy(model: SoftModel, data: RatingDataset) -> float:
    """Negative log-likelihood of ``data`` under ``model``.

    Returns an :class:`InfiniteEntropy` (``== inf``) that carries the index
    of the first impossible observation when one has zero likelihood.
    """
    like = _inner_likelihoods(model, data)
    bad = np.flatnonzero(like <= 0.0)
    if bad.size:
        return InfiniteEntropy(bad[0])
    return float(-np.log(like).sum())


# ---------------------------------------------------------------------------
# hard clustering


def pair_counts(sizes: np.ndarray) -> np.ndarray:
    """``D[i, j]``: vertex pairs between blocks (within-block pairs on the diagonal)."""
    s = np.asarray(sizes, dtype=np.int64)
    D = np.outer(s, s)
    np.fill_diagonal(D, s * (s - 1) // 2)
    return D


@dataclass(eq=False)
class HardClustering:
    """Assignment ``z`` with cached block sizes and block edge counts.

    ``block_edges`` is the full symmetric ``k x k`` matrix; the diagonal holds
    within-block edge counts.
    """

    k: int
    assignment: np.ndarray
    sizes: np.ndarray
    block_edges: np.ndarray

    @classmethod
    def from_assignment(cls, graph: SimpleGraph, assignment, k: int) -> "HardClustering":
        z = np.asarray(assignment, dtype=np.int64)
        if z.shape != (graph.n,):
            raise ValueError("assignment must have one entry per vertex")
        if z.size and (z.min() < 0 or z.max() >= k):
            raise ValueError("cluster index out of range")
        sizes = np.bincount(z, minlength=k).astype(np.int64)
        u, v = graph.edges()
        a, b = z[u], z[v]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        upper = np.bincount(lo * k + hi, minlength=k * k).reshape(k, k).astype(np.int64)
        block = upper + upper.T
        block[np.diag_indices(k)] = np.diag(upper)
        return cls(int(k), z.copy(), sizes, block)

    @property
    def pair_counts(self) -> np.ndarray:
        return pair_counts(self.sizes)

    @property
    def non_edges(self) -> np.ndarray:
        return self.pair_counts - self.block_edges

    def check(self, graph: SimpleGraph) -> None:
        assert self.sizes.sum() == graph.n
        iu = np.triu_indices(self.k)
        assert self.block_edges[iu].sum() == graph.m
        D = self.pair_counts
        assert np.all(self.block_edges >= 0) and np.all(self.block_edges <= D)
        assert np.array_equal(self.block_edges, self.block_edges.T)


def hard_entropy(c: HardClustering) -> float:
    """``sum_{i<=j} f(d_ij, d'_ij)`` over the upper triangle of blocks."""
    iu = np.triu_indices(c.k)
    return float(_f(c.block_edges[iu], c.non_edges[iu]).sum())


@dataclass(eq=False)
class BlockModelSummary:
    """Fitted edge probabilities ``p[i, j] = d_ij / D_ij`` (0 where ``D_ij == 0``)."""

    k: int
    sizes: np.ndarray
    probabilities: np.ndarray
    assignment: np.ndarray | None = field(default=None)

    @classmethod
    def from_clustering(cls, c: HardClustering) -> "BlockModelSummary":
        D = c.pair_counts
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(D > 0, c.block_edges / np.maximum(D, 1), 0.0)
        return cls(c.k, c.sizes.copy(), p, c.assignment.copy())
