"""Mixed-membership SBM fitting for bipartite rating data.

Two update rules share one outer loop:

* ``mmsbm_step``: exact EM. Every observation gets the full ``k x l``
  responsibility table, cost O(|X| k l).
* ``mcmmsbm_step``: Monte-Carlo EM. Each observation draws ``s`` cluster
  pairs from ``h_u x h_v`` and uses the sampled ``theta`` values as
  unnormalised responsibilities, cost O(|X| (k + s log k)).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from sbmcluster._kernels import exact_chunk, mc_chunk
from sbmcluster._parallel import map_chunks, ordered_sum
from sbmcluster.model import DegenerateModelError, RatingDataset, SoftModel, soft_entropy
from sbmcluster.rng import RngSpec

log = logging.getLogger(__name__)

STREAM_INIT = 0
STREAM_MC_USER = 1
STREAM_MC_ITEM = 2


@dataclass
class SoftFitConfig:
    k: int
    l: int
    sample_size: int = 30
    max_iterations: int = 200
    convergence_tol: float = 1e-6
    time_budget: float | None = None
    rng: RngSpec = field(default_factory=RngSpec)
    entropy_every: int = 1
    threads: int | None = None
    chunk_size: int = 8192

    def __post_init__(self):
        if self.k < 1 or self.l < 1:
            raise ValueError("k and l must be >= 1")
        if self.sample_size < 1:
            raise ValueError("sample size s must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ValueError("time_budget must be positive")
        if self.entropy_every < 1:
            raise ValueError("entropy_every must be >= 1")


class TracePoint(NamedTuple):
    iteration: int
    entropy: float
    elapsed: float


def init_soft_model(data: RatingDataset, cfg: SoftFitConfig) -> SoftModel:
    """Draw every membership row and theta slice uniformly from its simplex."""
    if len(data) == 0:
        raise ValueError("cannot initialise a model from an empty dataset")
    gen = cfg.rng.generator(STREAM_INIT)
    hu = gen.dirichlet(np.ones(cfg.k), size=data.n_users)
    hv = gen.dirichlet(np.ones(cfg.l), size=data.n_items)
    theta = gen.dirichlet(np.ones(data.n_ratings), size=(cfg.k, cfg.l))
    # the 1-simplex is a point; avoid gamma/gamma rounding
    for arr in (hu, hv, theta):
        if arr.shape[-1] == 1:
            arr[...] = 1.0
    return SoftModel(hu, hv, theta)


def _degrees(data: RatingDataset) -> tuple[np.ndarray, np.ndarray]:
    return (np.bincount(data.users, minlength=data.n_users),
            np.bincount(data.items, minlength=data.n_items))


def _finish(model: SoftModel, acc_u, cnt_u, acc_v, cnt_v, eta) -> SoftModel:
    """Normalise the accumulated sufficient statistics into a new model.

    Each contributing observation adds total mass 1 to a row, so dividing
    by the row mass equals dividing by the contributing-neighbor count, but
    keeps rows on the simplex to the last ulp. Rows with no contributing
    observations keep their old values, and so do theta slices whose
    accumulated mass is zero.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = acc_u.sum(axis=1, keepdims=True)
        mv = acc_v.sum(axis=1, keepdims=True)
        hu = np.where((cnt_u[:, None] > 0) & (mu > 0), acc_u / np.where(mu > 0, mu, 1.0), model.h_users)
        hv = np.where((cnt_v[:, None] > 0) & (mv > 0), acc_v / np.where(mv > 0, mv, 1.0), model.h_items)
        denom = eta.sum(axis=2, keepdims=True)
        theta = np.where(denom > 0, eta / np.where(denom > 0, denom, 1.0), model.theta)
    return SoftModel(hu, hv, theta)


def _exact_pass(model: SoftModel, data: RatingDataset, threads=None, chunk_size=8192):
    """One exact EM sweep; returns ``(updated model, entropy of the input model)``."""
    k, l, R = model.k, model.l, model.theta.shape[2]
    hu, hv = np.ascontiguousarray(model.h_users), np.ascontiguousarray(model.h_items)
    theta = np.ascontiguousarray(model.theta)

    def work(a, b):
        acc_u = np.zeros((data.n_users, k))
        acc_v = np.zeros((data.n_items, l))
        eta = np.zeros((k, l, R))
        ent, bad = exact_chunk(data.users[a:b], data.items[a:b], data.ratings[a:b],
                               hu, hv, theta, acc_u, acc_v, eta)
        if bad >= 0:
            raise DegenerateModelError(a + bad)
        return acc_u, acc_v, eta, ent

    parts = map_chunks(work, len(data), chunk_size, threads)
    acc_u, acc_v, eta, entropy = (ordered_sum(p[i] for p in parts) for i in range(4))
    cnt_u, cnt_v = _degrees(data)
    return _finish(model, acc_u, cnt_u, acc_v, cnt_v, eta), float(entropy)


def mmsbm_step(model: SoftModel, data: RatingDataset, threads: int | None = None) -> SoftModel:
    """Exact EM update of ``h`` and ``theta``.

    Raises
    ------
    DegenerateModelError
        If some observation has zero likelihood, so its responsibilities
        cannot be normalised.
    """
    return _exact_pass(model, data, threads)[0]


def _mc_pass(model: SoftModel, data: RatingDataset, s: int, rng: RngSpec, iteration: int,
             threads=None, chunk_size=8192) -> SoftModel:
    k, l, R = model.k, model.l, model.theta.shape[2]
    cum_u = np.cumsum(model.h_users, axis=1)
    cum_v = np.cumsum(model.h_items, axis=1)
    theta = np.ascontiguousarray(model.theta)

    def work(a, b):
        obs = np.arange(a, b)
        acc_u = np.zeros((data.n_users, k))
        acc_v = np.zeros((data.n_items, l))
        eta = np.zeros((k, l, R))
        cnt_u = np.zeros(data.n_users, dtype=np.int64)
        cnt_v = np.zeros(data.n_items, dtype=np.int64)
        mc_chunk(data.users[a:b], data.items[a:b], data.ratings[a:b],
                 rng.stream_keys(STREAM_MC_USER, iteration, obs),
                 rng.stream_keys(STREAM_MC_ITEM, iteration, obs),
                 cum_u, cum_v, theta, s, acc_u, acc_v, eta, cnt_u, cnt_v)
        return acc_u, acc_v, eta, cnt_u, cnt_v

    parts = map_chunks(work, len(data), chunk_size, threads)
    acc_u, acc_v, eta, cnt_u, cnt_v = (ordered_sum(p[i] for p in parts) for i in range(5))
    return _finish(model, acc_u, cnt_u, acc_v, cnt_v, eta)


def mcmmsbm_step(model: SoftModel, data: RatingDataset, cfg: SoftFitConfig, iteration: int = 0) -> SoftModel:
    """Monte-Carlo update with ``cfg.sample_size`` draws per observation.

    Draws for observation ``e`` at ``iteration`` come from the stream keyed
    by ``(seed, iteration, e)``. An observation whose sampled theta values
    are all zero is skipped for this iteration; the rows it touches are
    normalised over the remaining observations.
    """
    return _mc_pass(model, data, cfg.sample_size, cfg.rng, iteration, cfg.threads, cfg.chunk_size)


def fit_soft(data: RatingDataset, cfg: SoftFitConfig, variant: str = "exact",
             init: SoftModel | None = None) -> tuple[SoftModel, list[TracePoint]]:
    """Iterate a soft update until convergence, ``max_iterations`` or the time budget.

    ``variant`` is ``"exact"`` or ``"montecarlo"`` (alias ``"mc"``). The
    returned model is the lowest-entropy iterate seen, which for the exact
    variant is the last one.
    """
    if variant not in ("exact", "montecarlo", "mc"):
        raise ValueError(f"unknown variant {variant!r}")
    exact = variant == "exact"
    start = time.perf_counter()
    model = init.copy() if init is not None else init_soft_model(data, cfg)
    trace: list[TracePoint] = []
    best, best_s = model, np.inf
    produced_at = time.perf_counter() - start
    it = 0
    while True:
        out_of_time = cfg.time_budget is not None and time.perf_counter() - start >= cfg.time_budget
        last = it >= cfg.max_iterations or out_of_time
        nxt = None
        if exact and not last:
            nxt, entropy = _exact_pass(model, data, cfg.threads, cfg.chunk_size)
        elif last or it % cfg.entropy_every == 0:
            entropy = soft_entropy(model, data)
        else:
            entropy = None

        converged = False
        if entropy is not None:
            if trace:
                prev = trace[-1].entropy
                converged = abs(prev - entropy) <= cfg.convergence_tol * abs(prev)
            trace.append(TracePoint(it, float(entropy), produced_at))
            if entropy < best_s:
                best, best_s = model, entropy
            log.debug("iteration %d entropy %.4f", it, entropy)
        if last or converged:
            break
        if nxt is None:
            nxt = _mc_pass(model, data, cfg.sample_size, cfg.rng, it + 1, cfg.threads, cfg.chunk_size)
        model = nxt
        it += 1
        produced_at = time.perf_counter() - start
    return best, trace
