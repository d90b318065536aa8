"""End-to-end workflows: loading, cross-validated recommendation and graph anonymization."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from sbmcluster.graphgen import GraphStats, graph_stats, regenerate
from sbmcluster.hard_kmeans import (BipartiteHardModel, HardFitConfig, hard_fit_bipartite,
                                    hard_fit_graph)
from sbmcluster.model import (BlockModelSummary, HardClustering, RatingDataset, SimpleGraph,
                              SoftModel, hard_entropy)
from sbmcluster.rng import RngSpec
from sbmcluster.soft_sbm import SoftFitConfig, fit_soft

log = logging.getLogger(__name__)

STREAM_CV = 30
STREAM_BASELINE = 31


class DataFormatError(ValueError):
    """Input file could not be parsed; ``line`` is 1-based (0 when not line specific)."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = int(line)
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# loading


def _densify(tokens: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Dense 0-based codes; labels sorted numerically when every token is an integer."""
    uniq = sorted(set(tokens))
    try:
        uniq = sorted(uniq, key=int)
    except ValueError:
        pass
    index = {t: i for i, t in enumerate(uniq)}
    return np.array([index[t] for t in tokens], dtype=np.int64), np.array(uniq, dtype=object)


def load_ratings(path) -> RatingDataset:
    """Read ``user<TAB>item<TAB>rating[<TAB>timestamp]`` lines.

    Ids become dense 0-based indices (original ids kept as labels) and the
    rating alphabet is the sorted set of distinct observed values.
    """
    users, items, values, lines = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) not in (3, 4):
                raise DataFormatError(path, no, f"expected 3 or 4 tab-separated fields, got {len(parts)}")
            try:
                r = float(parts[2])
            except ValueError:
                raise DataFormatError(path, no, f"rating {parts[2]!r} is not a number") from None
            if not math.isfinite(r):
                raise DataFormatError(path, no, f"rating {parts[2]!r} is not finite")
            u, v = parts[0].strip(), parts[1].strip()
            if not u or not v:
                raise DataFormatError(path, no, "empty user or item id")
            users.append(u)
            items.append(v)
            values.append(r)
            lines.append(no)
    if not users:
        raise DataFormatError(path, 0, "empty dataset")
    uidx, ulab = _densify(users)
    vidx, vlab = _densify(items)
    key = uidx * len(vlab) + vidx
    order = np.argsort(key, kind="stable")
    dup = np.flatnonzero(np.diff(key[order]) == 0)
    if dup.size:
        first, second = order[dup[0]], order[dup[0] + 1]
        raise DataFormatError(path, lines[second],
                              f"duplicate (user, item) pair ({users[second]}, {items[second]}), "
                              f"first seen on line {lines[first]}")
    vals = np.asarray(values)
    alphabet, ridx = np.unique(vals, return_inverse=True)
    return RatingDataset(len(ulab), len(vlab), alphabet, uidx, vidx, ridx, ulab, vlab)


def load_graph(path) -> SimpleGraph:
    """Whitespace-separated edge list; ``%`` and ``#`` lines are comments.

    Only the first two columns are read, self-loops are dropped, duplicate
    edges merged and ids densified.
    """
    a, b = [], []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s[0] in "%#":
                continue
            parts = s.split()
            if len(parts) < 2:
                raise DataFormatError(path, no, "expected at least two vertex ids")
            a.append(parts[0])
            b.append(parts[1])
    codes, labels = _densify(a + b)
    m = len(a)
    return SimpleGraph.from_edges(len(labels), codes[:m], codes[m:], labels)


def _label(labels, i):
    return str(labels[i]) if labels is not None else str(i)


def write_edge_list(g: SimpleGraph, path) -> None:
    u, v = g.edges()
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in zip(u.tolist(), v.tolist()):
            fh.write(f"{_label(g.labels, a)} {_label(g.labels, b)}\n")


def write_assignment(path, assignment, labels=None) -> None:
    """One ``vertex cluster`` pair per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, c in enumerate(np.asarray(assignment).tolist()):
            fh.write(f"{_label(labels, i)} {c}\n")


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "entropy", "elapsed_seconds"])
        for p in trace:
            w.writerow([p.iteration, repr(float(p.entropy)), f"{p.elapsed:.6f}"])


# ---------------------------------------------------------------------------
# prediction


def rating_means(model: SoftModel, alphabet) -> np.ndarray:
    """``M[i, j] = sum_r theta[i, j, r] * r``."""
    return model.theta @ np.asarray(alphabet, dtype=np.float64)


def predict_ratings(model: SoftModel, alphabet, users, items) -> np.ndarray:
    """Vectorised expected rating ``h_u^T M h_v``, clipped to the alphabet range."""
    alphabet = np.asarray(alphabet, dtype=np.float64)
    M = rating_means(model, alphabet)
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    out = np.einsum("ei,ei->e", model.h_users[users], model.h_items[items] @ M.T)
    # a convex combination; clipping only removes rounding overshoot
    return np.clip(out, alphabet.min(), alphabet.max())


def predict_rating(model: SoftModel, u: int, v: int, alphabet) -> float:
    return float(predict_ratings(model, alphabet, [u], [v])[0])


def _hard_block_means(model: BipartiteHardModel, alphabet, global_mean=None):
    alphabet = np.asarray(alphabet, dtype=np.float64)
    n = model.block_totals
    if global_mean is None:
        total = n.sum()
        global_mean = float((model.counts.sum(axis=(0, 1)) @ alphabet) / total) if total else float(alphabet.mean())
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, (model.counts @ alphabet) / np.maximum(n, 1), global_mean)


def predict_ratings_hard(model: BipartiteHardModel, alphabet, users, items, global_mean=None) -> np.ndarray:
    """Block-conditional mean rating; empty blocks fall back to ``global_mean``.

    ``global_mean`` defaults to the mean rating stored in the model's counts.
    """
    M = _hard_block_means(model, alphabet, global_mean)
    return M[model.user_assignment[np.asarray(users, dtype=np.int64)],
             model.item_assignment[np.asarray(items, dtype=np.int64)]]


def predict_rating_hard(model: BipartiteHardModel, u: int, v: int, alphabet, global_mean=None) -> float:
    return float(predict_ratings_hard(model, alphabet, [u], [v], global_mean)[0])


def evaluate_rmse(predictions, actual) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError("predictions and test ratings differ in length")
    if a.size == 0:
        raise ValueError("RMSE of an empty test set is undefined")
    return float(np.sqrt(np.mean((a - p) ** 2)))


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CvSplit:
    fold_count: int
    folds: list[np.ndarray]
    seed: int

    def train_indices(self, f: int) -> np.ndarray:
        return np.sort(np.concatenate([self.folds[g] for g in range(self.fold_count) if g != f]))


def make_cv_split(n: int, fold_count: int = 5, seed: int = 0) -> CvSplit:
    """Shuffle ``range(n)`` with the seed and deal it into near-equal folds."""
    if fold_count < 2:
        raise ValueError("need at least 2 folds")
    if n < fold_count:
        raise ValueError(f"{n} observations cannot fill {fold_count} folds")
    perm = RngSpec(seed).generator(STREAM_CV).permutation(n)
    return CvSplit(fold_count, [np.sort(p) for p in np.array_split(perm, fold_count)], seed)


@dataclass
class FoldResult:
    fold: int
    rmse: float
    entropy: float
    fit_seconds: float
    iterations: int
    cold_start: int
    trace: list = field(repr=False, default_factory=list)


@dataclass
class CvResult:
    method: str
    folds: list[FoldResult]

    @property
    def fold_rmse(self) -> list[float]:
        return [f.rmse for f in self.folds]

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.fold_rmse))


_METHODS = {"mmsbm": "exact", "exact": "exact", "mcmmsbm": "montecarlo", "mc": "montecarlo",
            "montecarlo": "montecarlo", "hard": "hard"}


def _fit_predict(train: RatingDataset, test: RatingDataset, cfg, method: str):
    t0 = time.perf_counter()
    if method == "hard":
        model, trace = hard_fit_bipartite(train, cfg)
        fit_s = time.perf_counter() - t0
        pred = predict_ratings_hard(model, train.alphabet, test.users, test.items)
    else:
        model, trace = fit_soft(train, cfg, variant=method)
        fit_s = time.perf_counter() - t0
        pred = predict_ratings(model, train.alphabet, test.users, test.items)
    return pred, trace, fit_s, min(p.entropy for p in trace)


def run_cv(data: RatingDataset, cfg: SoftFitConfig | HardFitConfig, method: str = "mmsbm",
           folds: int = 5, seed: int | None = None, fold_workers: int = 1) -> CvResult:
    """K-fold cross-validated RMSE.

    ``method`` is ``mmsbm``, ``mcmmsbm`` (alias ``mc``) or ``hard``; the
    soft methods take a :class:`SoftFitConfig`, ``hard`` a
    :class:`HardFitConfig`. The split seed defaults to ``cfg.rng.seed``.
    Test pairs whose user or item never occurs in the training folds are
    predicted as the training mean rating.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    kind = _METHODS[method]
    if (kind == "hard") != isinstance(cfg, HardFitConfig):
        raise TypeError(f"method {method!r} needs a {'HardFitConfig' if kind == 'hard' else 'SoftFitConfig'}")
    split = make_cv_split(len(data), folds, cfg.rng.seed if seed is None else seed)

    def one(f):
        train = data.subset(split.train_indices(f))
        test = data.subset(split.folds[f])
        pred, trace, fit_s, ent = _fit_predict(train, test, cfg, kind)
        seen_u = np.bincount(train.users, minlength=data.n_users) > 0
        seen_v = np.bincount(train.items, minlength=data.n_items) > 0
        cold = ~(seen_u[test.users] & seen_v[test.items])
        pred = np.where(cold, train.values.mean(), pred)
        res = FoldResult(f, evaluate_rmse(pred, test.values), ent, fit_s,
                         trace[-1].iteration, int(cold.sum()), trace)
        log.info("fold %d: rmse %.4f entropy %.1f (%d iterations, %.1fs)",
                 f, res.rmse, ent, res.iterations, fit_s)
        return res

    if fold_workers > 1:
        with ThreadPoolExecutor(fold_workers) as ex:
            results = list(ex.map(one, range(folds)))
    else:
        results = [one(f) for f in range(folds)]
    return CvResult(method, results)


# ---------------------------------------------------------------------------
# anonymization


def _mean_se(xs) -> tuple[float, float]:
    x = np.asarray([v for v in xs if v is not None and math.isfinite(v)], dtype=np.float64)
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se


@dataclass
class AnonymizationReport:
    k: int
    original: GraphStats
    generations: list[GraphStats]
    entropy: float
    baseline_entropy: float
    fit_seconds: float = 0.0
    iterations: int = 0
    baseline_generations: list[GraphStats] = field(default_factory=list)
    trace: list = field(repr=False, default_factory=list)

    @property
    def apl_mean_se(self) -> tuple[float, float]:
        return _mean_se(g.apl for g in self.generations)

    @property
    def gcc_mean_se(self) -> tuple[float, float]:
        return _mean_se(g.gcc for g in self.generations)

    def to_dict(self, timings: bool = False) -> dict:
        """JSON-ready dict; wall-clock fields are only included with ``timings``."""
        def clean(x):
            return None if x is None or not math.isfinite(x) else x

        (am, ase), (gm, gse) = self.apl_mean_se, self.gcc_mean_se
        out = {
            "k": self.k,
            "entropy": self.entropy,
            "baseline_entropy": self.baseline_entropy,
            "iterations": self.iterations,
            "apl_mean": clean(am), "apl_se": clean(ase),
            "gcc_mean": clean(gm), "gcc_se": clean(gse),
            "original": self.original.to_dict(),
            "generations": [g.to_dict() for g in self.generations],
        }
        if self.baseline_generations:
            (bam, base), (bgm, bgse) = (_mean_se(g.apl for g in self.baseline_generations),
                                        _mean_se(g.gcc for g in self.baseline_generations))
            out.update(baseline_apl_mean=clean(bam), baseline_apl_se=clean(base),
                       baseline_gcc_mean=clean(bgm), baseline_gcc_se=clean(bgse),
                       baseline_generations=[g.to_dict() for g in self.baseline_generations])
        if timings:
            out["fit_seconds"] = self.fit_seconds
        return out


def baseline_clustering(g: SimpleGraph, k: int, rng: RngSpec) -> HardClustering:
    """Uniform random assignment, on its own stream per ``k``."""
    z = rng.generator(STREAM_BASELINE, k).integers(0, k, size=g.n)
    return HardClustering.from_assignment(g, z, k)


def run_anonymization(g: SimpleGraph, k_list, cfg: HardFitConfig, generations: int = 5,
                      apl_sources: int = 1000, baseline_generations: int = 0,
                      original_stats: GraphStats | None = None,
                      keep_graphs: bool = False) -> list[AnonymizationReport]:
    """Fit, regenerate and compare for every ``k`` in ``k_list``.

    Generation ``i`` at cluster count ``k`` uses regeneration stream
    ``k * generations + i``; baseline regenerations use a disjoint range.
    With ``keep_graphs`` each report gets a ``graphs`` attribute holding
    the regenerated graphs.
    """
    if generations < 1:
        raise ValueError("need at least one generation")
    rng, threads = cfg.rng, cfg.threads
    orig = original_stats or graph_stats(g, apl_sources, rng, threads)
    reports = []
    for k in k_list:
        kcfg = replace(cfg, k=int(k))
        t0 = time.perf_counter()
        best, trace = hard_fit_graph(g, kcfg)
        fit_s = time.perf_counter() - t0
        base = baseline_clustering(g, kcfg.k, rng)
        summary = BlockModelSummary.from_clustering(best)
        graphs, stats = [], []
        for i in range(generations):
            h = regenerate(summary, rng, kcfg.k * generations + i, threads)
            stats.append(graph_stats(h, apl_sources, rng, threads))
            if keep_graphs:
                graphs.append(h)
        base_stats = []
        if baseline_generations:
            bsum = BlockModelSummary.from_clustering(base)
            offset = 1 << 40
            for i in range(baseline_generations):
                h = regenerate(bsum, rng, offset + kcfg.k * baseline_generations + i, threads)
                base_stats.append(graph_stats(h, apl_sources, rng, threads))
        rep = AnonymizationReport(kcfg.k, orig, stats, hard_entropy(best), hard_entropy(base),
                                  fit_s, trace[-1].iteration, base_stats, trace)
        if keep_graphs:
            rep.graphs = graphs
        log.info("k=%d entropy %.1f (random %.1f) in %.1fs", k, rep.entropy, rep.baseline_entropy, fit_s)
        reports.append(rep)
    return reports


def default_output_dir() -> str:
    return os.environ.get("SBMCLUSTER_OUT", "sbmcluster-out")
