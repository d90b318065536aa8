"""Command-line interface: ``sbmcluster {fit-soft,fit-hard,recommend,anonymize,stats}``.

Exit status 0 on success, 1 on I/O or parse failures, 2 on invalid
configuration (argparse usage errors included).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from sbmcluster import pipeline
from sbmcluster._parallel import default_threads
from sbmcluster.graphgen import graph_stats
from sbmcluster.hard_kmeans import HardFitConfig, hard_fit_bipartite, hard_fit_graph
from sbmcluster.model import hard_entropy
from sbmcluster.rng import RngSpec
from sbmcluster.soft_sbm import SoftFitConfig, fit_soft

log = logging.getLogger("sbmcluster")


class ConfigError(ValueError):
    pass


# argparse `type=` helpers; their messages name the violated constraint


def _int_at_least(lo):
    def conv(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{s!r} is not an integer") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {v}")
        return v
    conv.__name__ = f"int>={lo}"
    return conv


def _positive_float(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a number") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _nonneg_float(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a number") from None
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _alpha(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a number") from None
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1], got {s}")
    return v


def _seed(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64), got {v}")
    return v


def parse_k_list(s: str) -> list[int]:
    try:
        ks = [int(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a comma-separated list of integers") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("every k must be >= 1")
    return ks


# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", default=None,
                   help="output directory, created if absent (default: $SBMCLUSTER_OUT or ./sbmcluster-out)")
    p.add_argument("--seed", type=_seed, default=0, help="random seed, integer in [0, 2^64) (default 0)")
    p.add_argument("--threads", type=_int_at_least(1), default=None,
                   help="worker threads, >= 1 (default: all cores); results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _soft_knobs(p):
    p.add_argument("--k", type=_int_at_least(1), default=10, help="user clusters, >= 1 (default 10)")
    p.add_argument("--l", type=_int_at_least(1), default=None, help="item clusters, >= 1 (default: same as k)")
    p.add_argument("--s", type=_int_at_least(1), default=30,
                   help="Monte-Carlo samples per observation, >= 1 (default 30; mc only)")
    p.add_argument("--max-iterations", type=_int_at_least(0), default=200,
                   help="iteration budget, >= 0 (default 200)")
    p.add_argument("--time-budget", type=_positive_float, default=None,
                   help="wall-clock budget in seconds, > 0 (default: none)")
    p.add_argument("--convergence-tol", type=_positive_float, default=1e-6,
                   help="stop when the relative entropy change is at most this, > 0 (default 1e-6)")


def _hard_knobs(p, default_k=15):
    p.add_argument("--k", type=_int_at_least(1), default=default_k,
                   help=f"clusters (users for ratings), >= 1 (default {default_k})")
    p.add_argument("--l", type=_int_at_least(1), default=None,
                   help="item clusters for ratings, >= 1 (default: same as k)")
    p.add_argument("--alpha", type=_alpha, default=0.1,
                   help="fraction of vertices reassigned per iteration, in (0, 1] (default 0.1)")
    p.add_argument("--max-iterations", type=_int_at_least(0), default=300,
                   help="iteration budget, >= 0 (default 300)")
    p.add_argument("--time-budget", type=_positive_float, default=None,
                   help="wall-clock budget in seconds, > 0 (default: none)")
    p.add_argument("--convergence-tol", type=_nonneg_float, default=1e-7,
                   help="relative entropy change counted as a stall, >= 0 (default 1e-7)")
    p.add_argument("--patience", type=_int_at_least(1), default=None,
                   help="stalled iterations before stopping, >= 1 (default: ceil(1/alpha))")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sbmcluster", description="Stochastic block model clustering.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-soft", help="fit a mixed-membership model to ratings",
                       description="Fit a mixed-membership block model to a tab-separated ratings file. "
                                   "Writes model.json and trace.csv.")
    p.add_argument("--input", required=True, help="ratings file: user<TAB>item<TAB>rating[<TAB>timestamp]")
    p.add_argument("--variant", choices=["exact", "mc"], default="exact",
                   help="exact EM or Monte-Carlo EM (default exact)")
    _soft_knobs(p)
    _common(p)
    p.set_defaults(func=cmd_fit_soft)

    p = sub.add_parser("fit-hard", help="hard clustering of a graph or of ratings",
                       description="Generalized k-means clustering. Writes assignment files "
                                   "(one 'vertex cluster' pair per line) and trace.csv.")
    p.add_argument("--input", required=True, help="edge list (graph) or ratings file")
    p.add_argument("--kind", choices=["graph", "ratings"], default="graph", help="input type (default graph)")
    _hard_knobs(p)
    _common(p)
    p.set_defaults(func=cmd_fit_hard)

    p = sub.add_parser("recommend", help="cross-validated rating prediction",
                       description="K-fold cross-validated RMSE. Writes rmse.csv, summary.json and "
                                   "one trace CSV per fold.")
    p.add_argument("--input", required=True, help="ratings file")
    p.add_argument("--method", choices=["mmsbm", "mcmmsbm", "mc", "hard"], default="mmsbm",
                   help="model to evaluate (default mmsbm)")
    p.add_argument("--folds", type=_int_at_least(2), default=5, help="number of folds, >= 2 (default 5)")
    p.add_argument("--fold-workers", type=_int_at_least(1), default=1,
                   help="folds fitted concurrently, >= 1 (default 1)")
    p.add_argument("--k", type=_int_at_least(1), default=10, help="user clusters, >= 1 (default 10)")
    p.add_argument("--l", type=_int_at_least(1), default=None, help="item clusters, >= 1 (default: same as k)")
    p.add_argument("--s", type=_int_at_least(1), default=30,
                   help="Monte-Carlo samples per observation, >= 1 (default 30; mc only)")
    p.add_argument("--alpha", type=_alpha, default=0.1, help="hard method reassignment fraction, in (0, 1] (default 0.1)")
    p.add_argument("--max-iterations", type=_int_at_least(0), default=None,
                   help="iteration budget, >= 0 (default 200 soft, 300 hard)")
    p.add_argument("--time-budget", type=_positive_float, default=None,
                   help="wall-clock budget per fold in seconds, > 0 (default: none)")
    p.add_argument("--convergence-tol", type=_positive_float, default=None,
                   help="relative entropy change tolerance, > 0 (default 1e-6 soft, 1e-7 hard)")
    _common(p)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("anonymize", help="fit, regenerate and compare graph statistics",
                       description="For each k: fit a hard clustering, regenerate graphs from the fitted "
                                   "block model and compare degree, GCC and APL statistics. Writes "
                                   "report_k<k>.json, trace_k<k>.csv and regenerated edge lists.")
    p.add_argument("--input", required=True, help="edge list; lines starting with %% or # are comments")
    p.add_argument("--k-list", type=parse_k_list, default=[25, 50, 100],
                   help="comma-separated cluster counts, each >= 1 (default 25,50,100)")
    p.add_argument("--generations", type=_int_at_least(1), default=5,
                   help="regenerated graphs per k, >= 1 (default 5)")
    p.add_argument("--baseline-generations", type=_int_at_least(0), default=0,
                   help="graphs regenerated from the random baseline clustering, >= 0 (default 0)")
    p.add_argument("--apl-sources", type=_int_at_least(1), default=1000,
                   help="BFS sources for the APL estimate, >= 1 (default 1000)")
    p.add_argument("--no-graphs", action="store_true", help="do not write regenerated edge lists")
    _hard_knobs(p, default_k=100)
    _common(p)
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("stats", help="degree histogram, GCC and APL of an edge list",
                       description="Compute graph statistics. Writes stats.json.")
    p.add_argument("--input", required=True, help="edge list")
    p.add_argument("--apl-sources", type=_int_at_least(1), default=1000,
                   help="BFS sources for the APL estimate, >= 1 (default 1000)")
    _common(p)
    p.set_defaults(func=cmd_stats)
    return ap


# ---------------------------------------------------------------------------


def _outdir(args) -> Path:
    out = Path(args.out or pipeline.default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _labels(x):
    return None if x is None else [str(t) for t in x]


def _soft_cfg(args, k, l, max_it, tol) -> SoftFitConfig:
    try:
        return SoftFitConfig(k=k, l=l or k, sample_size=args.s, max_iterations=max_it,
                             convergence_tol=tol, time_budget=args.time_budget,
                             rng=RngSpec(args.seed), threads=args.threads)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _hard_cfg(args, k, max_it, tol) -> HardFitConfig:
    try:
        return HardFitConfig(k=k, l=args.l, alpha=args.alpha, max_iterations=max_it,
                             convergence_tol=tol, patience=getattr(args, "patience", None),
                             time_budget=args.time_budget, rng=RngSpec(args.seed), threads=args.threads)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_fit_soft(args) -> int:
    data = pipeline.load_ratings(args.input)
    cfg = _soft_cfg(args, args.k, args.l, args.max_iterations, args.convergence_tol)
    out = _outdir(args)
    model, trace = fit_soft(data, cfg, variant="exact" if args.variant == "exact" else "montecarlo")
    _dump_json({
        "k": model.k, "l": model.l, "alphabet": data.alphabet.tolist(),
        "user_labels": _labels(data.user_labels), "item_labels": _labels(data.item_labels),
        "h_users": model.h_users.tolist(), "h_items": model.h_items.tolist(),
        "theta": model.theta.tolist(),
    }, out / "model.json")
    pipeline.write_trace_csv(out / "trace.csv", trace)
    print(f"final entropy {min(p.entropy for p in trace):.6f} after {trace[-1].iteration} iterations")
    return 0


def cmd_fit_hard(args) -> int:
    out = _outdir(args)
    if args.kind == "graph":
        g = pipeline.load_graph(args.input)
        cfg = _hard_cfg(args, args.k, args.max_iterations, args.convergence_tol)
        best, trace = hard_fit_graph(g, cfg)
        pipeline.write_assignment(out / "assignment.txt", best.assignment, g.labels)
        entropy = hard_entropy(best)
    else:
        data = pipeline.load_ratings(args.input)
        cfg = _hard_cfg(args, args.k, args.max_iterations, args.convergence_tol)
        best, trace = hard_fit_bipartite(data, cfg)
        pipeline.write_assignment(out / "assignment_users.txt", best.user_assignment, data.user_labels)
        pipeline.write_assignment(out / "assignment_items.txt", best.item_assignment, data.item_labels)
        entropy = best.entropy()
    pipeline.write_trace_csv(out / "trace.csv", trace)
    print(f"final entropy {entropy:.6f} after {trace[-1].iteration} iterations")
    return 0


def cmd_recommend(args) -> int:
    data = pipeline.load_ratings(args.input)
    if args.method == "hard":
        cfg = _hard_cfg(args, args.k, 300 if args.max_iterations is None else args.max_iterations,
                        1e-7 if args.convergence_tol is None else args.convergence_tol)
    else:
        cfg = _soft_cfg(args, args.k, args.l, 200 if args.max_iterations is None else args.max_iterations,
                        1e-6 if args.convergence_tol is None else args.convergence_tol)
    if len(data) < args.folds:
        raise ConfigError(f"{len(data)} observations cannot fill {args.folds} folds")
    out = _outdir(args)
    res = pipeline.run_cv(data, cfg, args.method, args.folds, args.seed, args.fold_workers)
    with open(out / "rmse.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "rmse", "entropy", "iterations", "cold_start"])
        for f in res.folds:
            w.writerow([f.fold, repr(f.rmse), repr(f.entropy), f.iterations, f.cold_start])
        w.writerow(["mean", repr(res.mean_rmse), repr(float(np.mean([f.entropy for f in res.folds]))), "", ""])
    for f in res.folds:
        pipeline.write_trace_csv(out / f"trace_fold{f.fold}.csv", f.trace)
    _dump_json({"method": args.method, "folds": args.folds, "k": args.k, "l": args.l or args.k,
                "fold_rmse": res.fold_rmse, "mean_rmse": res.mean_rmse,
                "fold_entropy": [f.entropy for f in res.folds]}, out / "summary.json")
    print(f"mean RMSE {res.mean_rmse:.4f} over {args.folds} folds")
    return 0


def cmd_anonymize(args) -> int:
    g = pipeline.load_graph(args.input)
    cfg = _hard_cfg(args, args.k_list[0], args.max_iterations, args.convergence_tol)
    out = _outdir(args)
    orig = graph_stats(g, args.apl_sources, cfg.rng, cfg.threads)
    for k in args.k_list:
        (rep,) = pipeline.run_anonymization(g, [k], cfg, args.generations, args.apl_sources,
                                            args.baseline_generations, orig, keep_graphs=not args.no_graphs)
        _dump_json(rep.to_dict(), out / f"report_k{k}.json")
        pipeline.write_trace_csv(out / f"trace_k{k}.csv", rep.trace)
        if not args.no_graphs:
            for i, h in enumerate(rep.graphs):
                h = type(h)(h.n, h.indptr, h.indices, g.labels)
                pipeline.write_edge_list(h, out / f"regenerated_k{k}_g{i}.txt")
        (am, ase), (gm, gse) = rep.apl_mean_se, rep.gcc_mean_se
        print(f"k={k}: entropy {rep.entropy:.1f} (random {rep.baseline_entropy:.1f}); "
              f"APL {am:.4f} +- {ase:.4f} (original {orig.apl:.4f}); "
              f"GCC {gm:.5f} +- {gse:.5f} (original {orig.gcc:.5f})")
    return 0


def cmd_stats(args) -> int:
    g = pipeline.load_graph(args.input)
    out = _outdir(args)
    st = graph_stats(g, args.apl_sources, RngSpec(args.seed), args.threads)
    _dump_json(st.to_dict(), out / "stats.json")
    print(f"n={st.n} m={st.m} GCC={st.gcc:.6f} APL={st.apl:.4f} (se {st.apl_se:.4f})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    if args.threads is None:
        args.threads = default_threads()
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"sbmcluster: invalid configuration: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"sbmcluster: no such file: {e.filename}", file=sys.stderr)
        return 1
    except (OSError, UnicodeDecodeError, pipeline.DataFormatError) as e:
        print(f"sbmcluster: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
