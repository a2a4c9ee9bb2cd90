"""Command-line interface.

Subcommands: build-graph, solve, active, certify, bench. Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from . import harness
from .graphs import (
    DuplicatePointsError,
    GraphFormatError,
    build_knn_graph,
    load_features,
    save_graph,
)
from .linalg import EigenSolveError, IndefiniteOperatorError, RankDeficiencyError
from .problem import LabelBudgetError, UnlabeledComponentError

CONFIG_ERRORS = (
    harness.ConfigError,
    GraphFormatError,
    DuplicatePointsError,
    LabelBudgetError,
    FileNotFoundError,
)
NUMERICAL_ERRORS = (
    EigenSolveError,
    IndefiniteOperatorError,
    RankDeficiencyError,
    UnlabeledComponentError,
    harness.NumericalFailure,
    np.linalg.LinAlgError,
)


def _add_common(p):
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--method", default=None)
    p.add_argument("--out", default=None, help="output directory (or $RESULT_DIR)")
    p.add_argument("--threads", type=int, default=None)


def _load(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.method is not None:
        if args.method not in harness.METHODS:
            raise harness.ConfigError("unknown method %r" % args.method)
        cfg.method = args.method
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _outdir(args):
    d = harness.result_dir(args.out)
    os.makedirs(d, exist_ok=True)
    return d


def cmd_build_graph(args):
    feats = load_features(args.features)
    g = build_knn_graph(feats, k=args.k)
    save_graph(g, args.out)
    print(
        "wrote %s: %d vertices, %d edges, %d component(s)"
        % (args.out, g.n_vertices, g.adjacency.nnz // 2, g.n_components)
    )
    return 0


def cmd_solve(args):
    cfg = _load(args)
    out = _outdir(args)
    summary = harness.run_experiment(cfg)
    harness.write_trials_csv(summary, os.path.join(out, "trials.csv"))
    harness.write_summary_json(summary, os.path.join(out, "summary.json"))
    print(
        "%s: accuracy %.4f (std %.4f) over %d trial(s)"
        % (cfg.method, summary.mean_accuracy, summary.std_accuracy, cfg.trials)
    )
    return 0


def cmd_active(args):
    cfg = _load(args)
    out = _outdir(args)
    bundle = harness.load_dataset(cfg)
    curve = harness.run_active(cfg, bundle)
    harness.write_active_csv(curve, os.path.join(out, "active_curve.csv"))
    harness.write_active_json(curve, os.path.join(out, "active.json"))
    if bundle.features is not None:
        from .active import grounded_score

        labels = harness.sample_labels(
            bundle.true_labels, cfg.labels_per_class, harness.trial_rng(cfg.seed, 0)
        )
        scores = grounded_score(bundle.graph, labels, ell=cfg.active.ell)
        harness.write_heatmap_csv(
            bundle.features, scores, os.path.join(out, "score_heatmap.csv")
        )
    print(
        "%s/%s: accuracy at budget %d: %.4f (std %.4f)"
        % (
            cfg.method,
            cfg.active.strategy,
            curve.budgets[-1],
            curve.mean_accuracy[-1],
            curve.std_accuracy[-1],
        )
    )
    return 0


def cmd_certify(args):
    cfg = _load(args)
    report = harness.certify(cfg)
    for key in (
        "certified",
        "extrapolated",
        "s1",
        "d1",
        "dk",
        "lambda_max",
        "lambda_spectrum",
        "foc",
        "converged",
    ):
        print("%s: %s" % (key, report[key]))
    return 0


def cmd_bench(args):
    cfg = _load(args)
    out = _outdir(args)
    result = harness.bench(cfg)
    harness.write_trace_jsonl(result["trace"], os.path.join(out, "ssm_trace.jsonl"))
    print("iter  ssm_foc        pgd_foc")
    n = max(len(result["ssm_foc"]), len(result["pgd_foc"]))
    for i in range(n):
        s = "%.3e" % result["ssm_foc"][i] if i < len(result["ssm_foc"]) else "-"
        p = "%.3e" % result["pgd_foc"][i] if i < len(result["pgd_foc"]) else "-"
        print("%4d  %-13s  %s" % (i, s, p))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spectralign",
        description="Graph SSL via aligned spectral embeddings and subspace refinement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="build a KNN graph from a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True, help="edge-list output path")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("solve", help="run seeded multi-trial experiments")
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("active", help="run the active-learning query loop")
    _add_common(p)
    p.set_defaults(func=cmd_active)

    p = sub.add_parser("certify", help="evaluate the global-optimality certificate")
    _add_common(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("bench", help="compare subspace solver against plain PGD")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as err:
        print("config error: %s" % err, file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as err:
        print("numerical failure: %s" % err, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
