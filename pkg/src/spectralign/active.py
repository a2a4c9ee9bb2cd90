"""Active-learning scores on graphs: grounded-spectral, margin, baselines.

The acquisition score weights squared entries of the smallest grounded
Laplacian eigenvectors by the unlabeled-subgraph degree, favoring vertices
that are both far from the labeled set and well connected. A geometric
schedule interpolates toward margin-based exploitation as labels accrue.
"""

from dataclasses import dataclass, field

import numpy as np

from .graphs import LabelSet, grounded_blocks
from .linalg import as_linop, smallest_eigenpairs


@dataclass
class ActiveState:
    """Mutable query-loop state: growing label set, schedule, and log."""

    labeled: LabelSet
    lambda_t: float = 0.0
    epsilon: float = 1e-4
    ell: int = 3
    query_log: list = field(default_factory=list)

    def advance_schedule(self, num_classes):
        """lambda <- (1 + epsilon^(1/2k)) lambda after a query batch."""
        self.lambda_t = lambda_growth_factor(self.epsilon, num_classes) * self.lambda_t


def lambda_growth_factor(epsilon, num_classes):
    return 1.0 + epsilon ** (1.0 / (2.0 * num_classes))


def unlabeled_degrees(graph, labeled_idx):
    """Degrees on the subgraph induced by the unlabeled vertices (full length)."""
    mask = np.ones(graph.n_vertices, dtype=bool)
    mask[np.asarray(labeled_idx, dtype=np.int64)] = False
    d = np.zeros(graph.n_vertices)
    sub = graph.adjacency[:, np.flatnonzero(mask)]
    d[mask] = np.asarray(sub[np.flatnonzero(mask)].sum(axis=1)).ravel()
    return d


def grounded_score(graph, labeled=None, ell=3, eig_vectors=None, tol=1e-8):
    """Spectral acquisition score, NaN at labeled vertices.

    With no labels the score is exactly degree / n (the constant eigenvector
    case), so the ranking is the degree ranking. Otherwise it is
    ||d_i * U_i^2||_2 over the ell smallest eigenvectors U of the grounded
    Laplacian, with d the unlabeled-subgraph degree. Signs of the
    eigenvectors are irrelevant (squared).
    """
    M = graph.n_vertices
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if labeled is None or (isinstance(labeled, LabelSet) and len(labeled) == 0):
        return graph.degrees / M
    idx = labeled.indices if isinstance(labeled, LabelSet) else np.asarray(labeled)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return graph.degrees / M
    if idx.size >= M:
        return np.full(M, np.nan)

    d_sub = unlabeled_degrees(graph, idx)
    mask = np.ones(M, dtype=bool)
    mask[idx] = False
    unlabeled = np.flatnonzero(mask)
    n = unlabeled.size
    ell_eff = min(ell, max(n - 1, 1))
    if eig_vectors is not None:
        U = np.atleast_2d(np.asarray(eig_vectors, dtype=np.float64))
        if U.shape[0] != n:
            raise ValueError("eig_vectors must have one row per unlabeled vertex")
        U = U[:, :ell_eff]
    elif n == 1:
        U = np.ones((1, 1))
    else:
        blocks = grounded_blocks(graph, idx)
        pairs = smallest_eigenpairs(as_linop(blocks.L_uu), ell_eff, tol=tol)
        U = pairs.vectors
    scores = np.full(M, np.nan)
    scores[unlabeled] = d_sub[unlabeled] * np.linalg.norm(U**2, axis=1)
    return scores


def margin(scores_row):
    """Largest minus second-largest class score (nonnegative)."""
    row = np.asarray(scores_row, dtype=np.float64)
    if row.size < 2:
        raise ValueError("margin needs at least 2 classes")
    top2 = np.partition(row, -2)[-2:]
    return float(top2[1] - top2[0])


def margins(score_matrix):
    S = np.asarray(score_matrix, dtype=np.float64)
    top2 = np.partition(S, S.shape[1] - 2, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def combined_score(state, spectral, prediction_scores):
    """s'(v) = s(v) - lambda_t * margin(v), NaN kept at labeled vertices."""
    spectral = np.asarray(spectral, dtype=np.float64)
    out = spectral.copy()
    if state.lambda_t != 0.0:
        out = out - state.lambda_t * margins(prediction_scores)
        out[np.isnan(spectral)] = np.nan
    return out


def query(state, scores, batch=1):
    """Top-``batch`` unlabeled vertices by score, ties to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    valid = np.flatnonzero(~np.isnan(scores))
    if batch > valid.size:
        raise ValueError(
            "batch %d exceeds %d remaining unlabeled vertices" % (batch, valid.size)
        )
    order = valid[np.lexsort((valid, -scores[valid]))]
    picked = order[:batch].tolist()
    state.query_log.extend(picked)
    return picked


def baseline_scores(name, graph, labeled=None, rng=None, prediction=None):
    """Comparison strategies: random, degree, margin_only, abs_u.

    Returns a full-length score array with NaN at labeled vertices.
    """
    M = graph.n_vertices
    idx = np.asarray(
        labeled.indices if isinstance(labeled, LabelSet) else (labeled if labeled is not None else []),
        dtype=np.int64,
    )
    out = np.full(M, np.nan)
    mask = np.ones(M, dtype=bool)
    if idx.size:
        mask[idx] = False
    unlabeled = np.flatnonzero(mask)
    if name == "random":
        if rng is None:
            raise ValueError("random strategy needs an rng")
        out[unlabeled] = rng.random(unlabeled.size)
    elif name == "degree":
        out[unlabeled] = graph.degrees[unlabeled]
    elif name == "margin_only":
        if prediction is None:
            raise ValueError("margin_only needs prediction scores")
        out[unlabeled] = -margins(np.asarray(prediction)[unlabeled])
    elif name == "abs_u":
        if idx.size == 0:
            out[unlabeled] = 1.0 / np.sqrt(M)
        else:
            blocks = grounded_blocks(graph, idx)
            pairs = smallest_eigenpairs(as_linop(blocks.L_uu), 1)
            out[unlabeled] = np.abs(pairs.vectors[:, 0])
    else:
        raise ValueError("unknown strategy %r" % (name,))
    return out


def restrict_eig_estimate(vectors, old_unlabeled, new_unlabeled):
    """Project eigenvector estimates onto a shrunken unlabeled set.

    Rows of ``vectors`` follow ``old_unlabeled``; the newly labeled rows are
    dropped and columns renormalized, giving a cheap warm estimate between
    exact refreshes.
    """
    pos = {v: i for i, v in enumerate(old_unlabeled)}
    keep = np.array([pos[v] for v in new_unlabeled if v in pos], dtype=np.int64)
    U = np.asarray(vectors)[keep]
    norms = np.linalg.norm(U, axis=0)
    norms[norms == 0] = 1.0
    return U / norms
