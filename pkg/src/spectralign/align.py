"""Spectral embedding, orthogonal alignment to labels, and regression baselines.

The approximate solver embeds the unlabeled vertices with the smallest
nontrivial eigenvectors of the projected grounded Laplacian, rotates the
embedding by the Procrustes polar factor so that X^T B becomes symmetric
PSD, rescales by C^{1/2}, and decodes.
"""

from dataclasses import dataclass

import numpy as np

from .graphs import Graph
from .linalg import (
    RankDeficiencyError,
    as_linop,
    smallest_eigenpairs,
)
from .problem import Prediction, decode, encode_labels


@dataclass
class AlignedEmbedding:
    """Embedding after alignment: orthogonal Q, X = X0 Q, and X C^{1/2}."""

    X: np.ndarray
    Q: np.ndarray
    X_scaled: np.ndarray
    eigenvalues: np.ndarray = None
    eigenvectors: np.ndarray = None


def eigenmap_embed(graph, k, tol=1e-8):
    """k smallest nontrivial Laplacian eigenvectors: orthonormal, mean-zero."""
    if not isinstance(graph, Graph):
        raise TypeError("graph must be a Graph")
    n = graph.n_vertices
    if k >= n:
        raise ValueError("need k < n_vertices")
    ones = np.full((n, 1), 1.0 / np.sqrt(n))
    eig = smallest_eigenpairs(as_linop(graph.laplacian()), k, deflate=ones, tol=tol)
    return eig.vectors


def problem_embedding(prob, k=None, tol=1e-8):
    """Smallest nontrivial eigenpairs of the problem operator P L_uu P."""
    if k is None:
        k = prob.k
    eig = smallest_eigenpairs(
        as_linop(prob.quad.A), k, deflate=prob.ones_direction(), tol=tol
    )
    return eig


def procrustes_align(X, B, C_half=None, on_deficiency="error"):
    """Best orthogonal rotation of X toward B: Q = U_B V_B^T from SVD(X^T B).

    Maximizes <XQ, B> over Q with orthonormal columns; afterwards (XQ)^T B
    is symmetric PSD. X may carry extra columns (a padded embedding), in
    which case Q is the thin polar factor and XQ keeps B's column count.

    When X^T B is rank deficient the maximizer is not unique. The default
    raises :class:`RankDeficiencyError`; ``on_deficiency="complete"``
    instead keeps the SVD's deterministic orthogonal completion, which is
    still a maximizer (symmetric structure can make B itself deficient, and
    no amount of extra eigenvectors helps there).
    """
    X = np.asarray(X, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    M = X.T @ B
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.linalg.norm(B)):
        raise RankDeficiencyError(
            "B is orthogonal to span(X) (sigma_max = %.3e); nothing to align"
            % s[0]
        )
    if s[-1] <= 1e-12 * s[0] and on_deficiency == "error":
        raise RankDeficiencyError(
            "X^T B is rank deficient (sigma_min = %.3e); alignment is not "
            "unique" % s[-1]
        )
    Q = U @ Vt
    XQ = X @ Q
    X_scaled = XQ @ C_half if C_half is not None else XQ
    return AlignedEmbedding(X=XQ, Q=Q, X_scaled=X_scaled)


def approx_solve(prob, retry_extra=2):
    """Procrustes-aligned spectral solve: embed, align to B, rescale, decode.

    When X^T B has lower rank than B itself, the embedding is padded with
    extra eigenvectors (up to ``retry_extra`` more) until the achievable
    rank min(k, rank B) is reached; deficiency intrinsic to B is completed
    deterministically.

    Returns
    -------
    (AlignedEmbedding, Prediction)
    """
    k = prob.k
    rank_b = _numerical_rank(np.linalg.svd(prob.B, compute_uv=False))
    eig = problem_embedding(prob, k)
    for extra in range(1, retry_extra + 1):
        cross_rank = _numerical_rank(
            np.linalg.svd(eig.vectors.T @ prob.B, compute_uv=False)
        )
        if cross_rank >= min(k, rank_b):
            break
        eig = problem_embedding(prob, k + extra)
    aligned = procrustes_align(
        eig.vectors, prob.B, prob.C_half, on_deficiency="complete"
    )
    aligned.eigenvalues = eig.values[:k]
    aligned.eigenvectors = eig.vectors[:, :k]
    return aligned, decode(prob, aligned.X_scaled)


def _numerical_rank(s, tol=1e-12):
    s = np.asarray(s)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def le_ssl_baseline(prob, X_eig):
    """Unconstrained least-squares regression on Laplacian eigenvector features.

    Fits Q minimizing sum_i ||x_i Q - y_i||^2 over the labeled rows of the
    full-graph embedding ``X_eig`` (minimum-norm solution), predicts X_eig Q.
    """
    X_eig = np.asarray(X_eig, dtype=np.float64)
    if X_eig.shape[0] != prob.n_total:
        raise ValueError(
            "X_eig must embed all %d vertices (got %d rows)"
            % (prob.n_total, X_eig.shape[0])
        )
    A = X_eig[prob.labels.indices]
    Y = encode_labels(prob.labels)
    Q, *_ = np.linalg.lstsq(A, Y, rcond=None)
    scores = X_eig @ Q
    scores[prob.labels.indices] = Y
    labels = np.argmax(scores, axis=1)
    labels[prob.labels.indices] = prob.labels.values
    return Prediction(scores=scores, labels=labels)
