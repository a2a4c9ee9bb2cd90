"""Experiment orchestration: configs, seeded trials, active loops, exports.

Trials draw stratified label samples from counter-based RNG streams
(Philox keyed by (seed, trial)), so runs are deterministic given the
config and reruns produce byte-identical exports. Wall-clock timings are
tracked in memory but never exported, to keep that guarantee.
"""

import configparser
import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import active as active_mod
from . import align, problem, refine, ssm
from .graphs import (
    Graph,
    LabelSet,
    build_knn_graph,
    gen_barbell,
    gen_gaussian_ring,
    load_features,
    load_labels,
)
from .problem import assemble, decode, global_certificate, laplace_learning

METHODS = ("laplace", "procrustes", "le_ssl", "ssm", "ssm_kl")
STRATEGIES = ("spectral", "combined", "random", "degree", "margin_only", "abs_u")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class NumericalFailure(RuntimeError):
    """Every trial of an experiment failed numerically."""


@dataclass
class DatasetConfig:
    kind: str = "gaussian_ring"  # barbell | gaussian_ring | external
    clique_size: int = 5
    n_per_cluster: int = 300
    sigma: float = 0.17
    data_seed: int = 0
    features_path: str = ""
    labels_path: str = ""


@dataclass
class ActiveConfig:
    strategy: str = "spectral"
    budget: int = 16
    batch: int = 1
    ell: int = 3
    epsilon: float = 1e-4
    lambda0: float = 0.0
    reuse_eigs: bool = True
    eig_refresh_every: int = 10


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    knn_k: int = 10
    labels_per_class: int = 1
    trials: int = 100
    seed: int = 0
    method: str = "ssm"
    threads: int = 1
    kl_max_sweeps: int = 10
    solver: ssm.SsmConfig = field(default_factory=ssm.SsmConfig)
    active: ActiveConfig = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.labels_per_class < 1:
            raise ConfigError("labels_per_class must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(
                "unknown method %r (expected one of %s)" % (self.method, list(METHODS))
            )
        if self.active is not None and self.active.strategy not in STRATEGIES:
            raise ConfigError(
                "unknown strategy %r (expected one of %s)"
                % (self.active.strategy, list(STRATEGIES))
            )


def _get_typed(section, key, cast, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        if cast is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError:
        raise ConfigError("could not parse %s = %r" % (key, raw))


def load_config(path):
    """Parse a key = value config file with [dataset]/[experiment]/[solver]/[active]."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError("config file %r not found or unreadable" % path)

    ds = parser["dataset"] if parser.has_section("dataset") else {}
    dataset = DatasetConfig(
        kind=_get_typed(ds, "kind", str, "gaussian_ring"),
        clique_size=_get_typed(ds, "clique_size", int, 5),
        n_per_cluster=_get_typed(ds, "n_per_cluster", int, 300),
        sigma=_get_typed(ds, "sigma", float, 0.17),
        data_seed=_get_typed(ds, "data_seed", int, 0),
        features_path=_get_typed(ds, "features", str, ""),
        labels_path=_get_typed(ds, "labels", str, ""),
    )
    if dataset.kind not in ("barbell", "gaussian_ring", "external"):
        raise ConfigError("unknown dataset kind %r" % dataset.kind)
    if dataset.kind == "external" and not (
        dataset.features_path and dataset.labels_path
    ):
        raise ConfigError("external dataset needs features = and labels = paths")

    ex = parser["experiment"] if parser.has_section("experiment") else {}
    sv = parser["solver"] if parser.has_section("solver") else {}
    solver = ssm.SsmConfig(
        foc_tol=_get_typed(sv, "foc_tol", float, 1e-6),
        max_outer=_get_typed(sv, "max_outer", int, 50),
        armijo_s=_get_typed(sv, "armijo_s", float, 1.0),
        armijo_sigma=_get_typed(sv, "armijo_sigma", float, 1e-4),
        armijo_beta=_get_typed(sv, "armijo_beta", float, 0.5),
        subspace_inner_iters=_get_typed(sv, "subspace_inner_iters", int, 200),
        include_eigvecs=_get_typed(sv, "include_eigvecs", int, None),
        safeguard_shifts=_get_typed(sv, "safeguard_shifts", bool, False),
    )
    active = None
    if parser.has_section("active"):
        ac = parser["active"]
        active = ActiveConfig(
            strategy=_get_typed(ac, "strategy", str, "spectral"),
            budget=_get_typed(ac, "budget", int, 16),
            batch=_get_typed(ac, "batch", int, 1),
            ell=_get_typed(ac, "ell", int, 3),
            epsilon=_get_typed(ac, "epsilon", float, 1e-4),
            lambda0=_get_typed(ac, "lambda0", float, 0.0),
            reuse_eigs=_get_typed(ac, "reuse_eigs", bool, True),
            eig_refresh_every=_get_typed(ac, "eig_refresh_every", int, 10),
        )
    return ExperimentConfig(
        dataset=dataset,
        knn_k=_get_typed(ex, "knn_k", int, 10),
        labels_per_class=_get_typed(ex, "labels_per_class", int, 1),
        trials=_get_typed(ex, "trials", int, 100),
        seed=_get_typed(ex, "seed", int, 0),
        method=_get_typed(ex, "method", str, "ssm"),
        threads=_get_typed(ex, "threads", int, 1),
        kl_max_sweeps=_get_typed(ex, "kl_max_sweeps", int, 10),
        solver=solver,
        active=active,
    )


@dataclass
class DatasetBundle:
    graph: Graph
    true_labels: np.ndarray
    features: np.ndarray = None  # 2-D coordinates when available

    @property
    def num_classes(self):
        return int(self.true_labels.max()) + 1


def load_dataset(cfg):
    """Materialize the configured dataset: graph plus ground-truth labels."""
    ds = cfg.dataset
    if ds.kind == "barbell":
        graph = gen_barbell(ds.clique_size)
        labels = np.repeat([0, 1], ds.clique_size)
        return DatasetBundle(graph=graph, true_labels=labels)
    if ds.kind == "gaussian_ring":
        feats, labels = gen_gaussian_ring(ds.n_per_cluster, ds.sigma, ds.data_seed)
        graph = build_knn_graph(feats, k=cfg.knn_k)
        return DatasetBundle(graph=graph, true_labels=labels, features=feats)
    if ds.kind == "external":
        feats = load_features(ds.features_path)
        label_set = load_labels(ds.labels_path)
        labels = np.full(feats.shape[0], -1, dtype=np.int64)
        labels[label_set.indices] = label_set.values
        if (labels < 0).any():
            raise ConfigError(
                "external labels file must cover every vertex for trial sampling"
            )
        graph = build_knn_graph(feats, k=cfg.knn_k)
        coords = feats if feats.shape[1] == 2 else None
        return DatasetBundle(graph=graph, true_labels=labels, features=coords)
    raise ConfigError("unknown dataset kind %r" % ds.kind)


def trial_rng(seed, trial):
    """Counter-based independent stream: Philox keyed by (seed, trial)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, trial], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_labels(true_labels, labels_per_class, rng):
    """Stratified uniform sample without replacement, labels_per_class each."""
    classes = np.unique(true_labels)
    picked = []
    for c in classes:
        pool = np.flatnonzero(true_labels == c)
        if pool.size < labels_per_class:
            raise ConfigError(
                "class %d has only %d vertices (< labels_per_class=%d)"
                % (c, pool.size, labels_per_class)
            )
        picked.append(rng.choice(pool, size=labels_per_class, replace=False))
    idx = np.sort(np.concatenate(picked))
    return LabelSet(idx, true_labels[idx], int(classes.max()) + 1)


def run_method(method, graph, labels, cfg):
    """One pipeline run; returns (Prediction, foc_final, iterations)."""
    if method == "laplace":
        return laplace_learning(graph, labels), float("nan"), 0
    prob = assemble(graph, labels)
    if method == "procrustes":
        _, pred = align.approx_solve(prob)
        return pred, float("nan"), 0
    if method == "le_ssl":
        X_eig = align.eigenmap_embed(graph, labels.num_classes)
        return align.le_ssl_baseline(prob, X_eig), float("nan"), 0
    if method in ("ssm", "ssm_kl"):
        X_scaled, state = ssm.ssm_solve(prob, config=cfg.solver)
        pred = decode(prob, X_scaled)
        if method == "ssm_kl":
            pred = refine.kl_refine(
                graph, pred, labels, max_sweeps=cfg.kl_max_sweeps, seed=cfg.seed
            )
        return pred, state.foc_history[-1], state.iterations
    raise ConfigError("unknown method %r" % method)


@dataclass
class TrialResult:
    trial: int
    accuracy: float
    per_class: list
    foc_final: float
    iterations: int
    n_labeled: int
    wall_time: float  # kept in memory, never exported (determinism)
    query_log: list = None
    error: str = None


@dataclass
class ExperimentSummary:
    config: dict
    mean_accuracy: float
    std_accuracy: float
    results: list


def _accuracy(pred_labels, true_labels, exclude_idx):
    mask = np.ones(true_labels.size, dtype=bool)
    mask[exclude_idx] = False
    return float(np.mean(pred_labels[mask] == true_labels[mask]))


def _per_class_accuracy(pred_labels, true_labels, exclude_idx, k):
    mask = np.ones(true_labels.size, dtype=bool)
    mask[exclude_idx] = False
    out = []
    for c in range(k):
        sel = mask & (true_labels == c)
        out.append(
            float(np.mean(pred_labels[sel] == true_labels[sel]))
            if sel.any()
            else float("nan")
        )
    return out


def _run_trial(trial, cfg, bundle):
    rng = trial_rng(cfg.seed, trial)
    t0 = time.perf_counter()
    try:
        labels = sample_labels(bundle.true_labels, cfg.labels_per_class, rng)
        pred, foc, iters = run_method(cfg.method, bundle.graph, labels, cfg)
    except (problem.UnlabeledComponentError, problem.LabelBudgetError) as err:
        return TrialResult(
            trial=trial,
            accuracy=float("nan"),
            per_class=[float("nan")] * bundle.num_classes,
            foc_final=float("nan"),
            iterations=0,
            n_labeled=cfg.labels_per_class * bundle.num_classes,
            wall_time=time.perf_counter() - t0,
            error=str(err),
        )
    acc = _accuracy(pred.labels, bundle.true_labels, labels.indices)
    per_class = _per_class_accuracy(
        pred.labels, bundle.true_labels, labels.indices, bundle.num_classes
    )
    return TrialResult(
        trial=trial,
        accuracy=acc,
        per_class=per_class,
        foc_final=foc,
        iterations=iters,
        n_labeled=len(labels),
        wall_time=time.perf_counter() - t0,
    )


def config_dict(cfg):
    """Flat, JSON-ready echo of the config (deterministic key order)."""
    out = asdict(cfg)
    if cfg.active is None:
        out.pop("active", None)
    return out


def run_experiment(cfg, bundle=None):
    """Seeded multi-trial run of the configured method.

    Returns an :class:`ExperimentSummary`; per-trial errors (for instance a
    labelless component under laplace) are recorded on the trial rather than
    raised.
    """
    if bundle is None:
        bundle = load_dataset(cfg)
    trials = range(cfg.trials)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda t: _run_trial(t, cfg, bundle), trials))
    else:
        results = [_run_trial(t, cfg, bundle) for t in trials]
    accs = np.array([r.accuracy for r in results if r.error is None])
    if accs.size == 0:
        raise NumericalFailure("every trial failed: %s" % results[0].error)
    return ExperimentSummary(
        config=config_dict(cfg),
        mean_accuracy=float(accs.mean()),
        std_accuracy=float(accs.std()),
        results=results,
    )


# ---------------------------------------------------------------------------
# Active learning loop
# ---------------------------------------------------------------------------


@dataclass
class ActiveCurve:
    config: dict
    budgets: list
    accuracies: np.ndarray  # (trials, points)
    mean_accuracy: list
    std_accuracy: list
    query_logs: list


def _active_scores(strategy, graph, labels, state, pred, rng, eig_estimate=None):
    if strategy in ("spectral", "combined"):
        spectral = active_mod.grounded_score(
            graph, labels, ell=state.ell, eig_vectors=eig_estimate
        )
        if strategy == "combined" and pred is not None:
            return active_mod.combined_score(state, spectral, pred.scores)
        return spectral
    if strategy == "random":
        return active_mod.baseline_scores("random", graph, labels, rng=rng)
    if strategy == "margin_only":
        return active_mod.baseline_scores(
            "margin_only", graph, labels, prediction=pred.scores
        )
    return active_mod.baseline_scores(strategy, graph, labels)


def _active_solve(cfg, graph, labels):
    """Solve and, for the subspace methods, expose the free eigen estimates."""
    if cfg.method in ("ssm", "ssm_kl"):
        prob = assemble(graph, labels)
        X_scaled, state = ssm.ssm_solve(prob, config=cfg.solver)
        pred = decode(prob, X_scaled)
        if cfg.method == "ssm_kl":
            pred = refine.kl_refine(
                graph, pred, labels, max_sweeps=cfg.kl_max_sweeps, seed=cfg.seed
            )
        return pred, state.eig_vectors
    pred, _, _ = run_method(cfg.method, graph, labels, cfg)
    return pred, None


def run_active(cfg, bundle=None):
    """Query loop: solve, score, label the top batch from ground truth, repeat.

    Emits the accuracy-versus-budget curve for the configured strategy.
    """
    if cfg.active is None:
        raise ConfigError("config has no [active] section")
    if bundle is None:
        bundle = load_dataset(cfg)
    ac = cfg.active
    if ac.budget % ac.batch != 0:
        raise ConfigError("budget must be a multiple of batch")
    steps = ac.budget // ac.batch
    budgets = [i * ac.batch for i in range(steps + 1)]
    k = bundle.num_classes

    all_acc = np.zeros((cfg.trials, steps + 1))
    logs = []
    for trial in range(cfg.trials):
        rng = trial_rng(cfg.seed, trial)
        labels = sample_labels(bundle.true_labels, cfg.labels_per_class, rng)
        pool_size = bundle.graph.n_vertices - len(labels)
        if ac.budget > pool_size:
            raise ConfigError(
                "budget %d exceeds %d unlabeled vertices" % (ac.budget, pool_size)
            )
        state = active_mod.ActiveState(
            labeled=labels, lambda_t=ac.lambda0, epsilon=ac.epsilon, ell=ac.ell
        )
        for step in range(steps + 1):
            pred, eig_estimate = _active_solve(cfg, bundle.graph, state.labeled)
            all_acc[trial, step] = _accuracy(
                pred.labels, bundle.true_labels, state.labeled.indices
            )
            if step == steps:
                break
            # free solver estimates between exact refreshes (every N queries)
            reuse = None
            if (
                ac.reuse_eigs
                and eig_estimate is not None
                and len(state.query_log) % ac.eig_refresh_every != 0
            ):
                reuse = eig_estimate
            scores = _active_scores(
                ac.strategy, bundle.graph, state.labeled, state, pred, rng,
                eig_estimate=reuse,
            )
            picked = active_mod.query(state, scores, ac.batch)
            state.labeled = state.labeled.add(picked, bundle.true_labels[picked])
            state.advance_schedule(k)
        logs.append(list(state.query_log))

    mean = all_acc.mean(axis=0)
    std = all_acc.std(axis=0)
    return ActiveCurve(
        config=config_dict(cfg),
        budgets=budgets,
        accuracies=all_acc,
        mean_accuracy=[float(v) for v in mean],
        std_accuracy=[float(v) for v in std],
        query_logs=logs,
    )


def certify(cfg, bundle=None):
    """Run the solver on trial 0's sample and evaluate the global certificate."""
    if bundle is None:
        bundle = load_dataset(cfg)
    rng = trial_rng(cfg.seed, 0)
    labels = sample_labels(bundle.true_labels, cfg.labels_per_class, rng)
    prob = assemble(bundle.graph, labels)
    X_scaled, state = ssm.ssm_solve(prob, config=cfg.solver)
    report = global_certificate(prob, state.X)
    return {
        "certified": report.certified,
        "extrapolated": report.extrapolated,
        "s1": report.s1,
        "d1": report.d1,
        "dk": report.dk,
        "lambda_max": report.lambda_max,
        "lambda_spectrum": [float(v) for v in report.lambda_spectrum],
        "foc": state.foc_history[-1],
        "converged": state.converged,
    }


def bench(cfg, bundle=None):
    """Convergence comparison: subspace solver versus plain projected gradient."""
    if bundle is None:
        bundle = load_dataset(cfg)
    rng = trial_rng(cfg.seed, 0)
    labels = sample_labels(bundle.true_labels, cfg.labels_per_class, rng)
    prob = assemble(bundle.graph, labels)
    aligned, _ = align.approx_solve(prob)
    trace_rows = []
    _, state = ssm.ssm_solve(
        prob, X0=aligned.X, config=cfg.solver, trace=trace_rows.append
    )
    pgd = ssm.pgd_armijo(
        prob.quad,
        aligned.X,
        foc_tol=cfg.solver.foc_tol,
        max_iter=100,
        deflate=prob.ones_direction(),
    )
    return {
        "ssm_foc": [float(v) for v in state.foc_history],
        "ssm_objective": [float(v) for v in state.obj_history],
        "ssm_converged": state.converged,
        "pgd_foc": [float(v) for v in pgd.foc_history],
        "pgd_objective": [float(v) for v in pgd.obj_history],
        "trace": trace_rows,
    }


# ---------------------------------------------------------------------------
# Exports (byte-deterministic: no timing fields)
# ---------------------------------------------------------------------------


def result_dir(out=None):
    return out or os.environ.get("RESULT_DIR", ".")


def write_trials_csv(summary, path):
    """One row per trial: trial, accuracy, foc_final, iterations, n_labeled, per-class."""
    k = len(summary.results[0].per_class)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["trial", "accuracy", "foc_final", "iterations", "n_labeled"]
            + ["acc_class_%d" % c for c in range(k)]
        )
        for r in summary.results:
            writer.writerow(
                [r.trial, repr(r.accuracy), repr(r.foc_final), r.iterations, r.n_labeled]
                + [repr(v) for v in r.per_class]
            )


def write_summary_json(summary, path):
    payload = {
        "config": summary.config,
        "mean_accuracy": summary.mean_accuracy,
        "std_accuracy": summary.std_accuracy,
        "results": [
            {
                "trial": r.trial,
                "accuracy": r.accuracy,
                "per_class": r.per_class,
                "foc_final": r.foc_final,
                "iterations": r.iterations,
                "n_labeled": r.n_labeled,
                "query_log": r.query_log,
                "error": r.error,
            }
            for r in summary.results
        ],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_active_json(curve, path):
    payload = {
        "config": curve.config,
        "budgets": curve.budgets,
        "mean_accuracy": curve.mean_accuracy,
        "std_accuracy": curve.std_accuracy,
        "accuracies": [[float(v) for v in row] for row in curve.accuracies],
        "query_logs": curve.query_logs,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_active_csv(curve, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["queries", "mean_accuracy", "std_accuracy"])
        for b, m, s in zip(curve.budgets, curve.mean_accuracy, curve.std_accuracy):
            writer.writerow([b, repr(m), repr(s)])


def write_heatmap_csv(features, scores, path):
    """Per-vertex score snapshot for 2-D data: vertex, x, y, score."""
    feats = np.asarray(features)
    if feats.ndim != 2 or feats.shape[1] != 2:
        raise ValueError("heatmap export needs 2-D coordinates")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["vertex", "x", "y", "score"])
        for i, ((x, y), s) in enumerate(zip(feats, np.asarray(scores))):
            writer.writerow([i, repr(float(x)), repr(float(y)), repr(float(s))])


def write_trace_jsonl(rows, path):
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
