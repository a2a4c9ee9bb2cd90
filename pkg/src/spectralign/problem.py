"""Supervised spectral problem: assembly, evaluation, decoding, baselines.

The pipeline turns a graph plus a partial labeling into a quadratic program
over matrices with orthonormal columns,

    minimize  1/2 <X, A X C> - <X, B C^{1/2}>   s.t.  X^T X = I,

where A is the grounded Laplacian sandwiched by mean-removal projectors,
B collects the attraction of unlabeled vertices to their labeled neighbors
(plus the centering correction), and C is the label-adjusted second-moment
target. Solutions map back to class scores through ``decode``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graphs import LabelSet, grounded_blocks
from .linalg import (
    LinOp,
    as_linop,
    centered_operator,
    cg_solve,
    small_sym_eig,
    smallest_eigenpairs,
    sqrt_and_invsqrt,
)


class LabelBudgetError(ValueError):
    """The label counts break positive definiteness of the scaling matrix C."""


class UnlabeledComponentError(ValueError):
    """A connected component has no labeled vertex (harmonic solve ill-posed)."""


def _apply(A, X):
    if isinstance(A, LinOp):
        return A(X)
    return A @ X


@dataclass
class StiefelQuadratic:
    """Quadratic program data: operator A, affine term B, SPD scaling C."""

    A: object  # LinOp, sparse, or ndarray
    B: np.ndarray
    C: np.ndarray
    C_half: np.ndarray = None
    C_invhalf: np.ndarray = None

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.float64)
        if self.C_half is None or self.C_invhalf is None:
            self.C_half, self.C_invhalf = sqrt_and_invsqrt(self.C)

    @property
    def n(self):
        return self.B.shape[0]

    @property
    def k(self):
        return self.B.shape[1]

    def objective(self, X):
        """F(X) = 1/2 <X, A X C> - <X, B C^{1/2}>."""
        AX = _apply(self.A, X)
        return 0.5 * float(np.sum(X * (AX @ self.C))) - float(
            np.sum(X * (self.B @ self.C_half))
        )

    def gradient(self, X):
        """Euclidean gradient A X C - B C^{1/2}."""
        return _apply(self.A, X) @ self.C - self.B @ self.C_half

    def multiplier(self, X, symmetrize=True):
        """Least-squares multiplier X^T (A X C - B C^{1/2})."""
        lam = X.T @ self.gradient(X)
        if symmetrize:
            lam = 0.5 * (lam + lam.T)
        return lam

    def foc_residual(self, X, lam=None):
        """||A X C - B C^{1/2} - X lam||_F (lam defaults to the symmetrized estimate)."""
        g = self.gradient(X)
        if lam is None:
            lam = X.T @ g
            lam = 0.5 * (lam + lam.T)
        return float(np.linalg.norm(g - X @ lam))

    def multiplier_spectrum(self, X):
        """Eigenvalues of C^{-1/2} Lambda C^{-1/2}, ascending."""
        lam = self.multiplier(X)
        w, _ = small_sym_eig(self.C_invhalf @ lam @ self.C_invhalf)
        return w

    def reduced(self, V):
        """Compression onto an isometry V: (V^T A V, V^T B, same C)."""
        AV = _apply(self.A, V)
        Ared = V.T @ AV
        Ared = 0.5 * (Ared + Ared.T)
        return StiefelQuadratic(
            Ared, V.T @ self.B, self.C, self.C_half, self.C_invhalf
        )


@dataclass
class PartitionedProblem:
    """Assembled supervised spectral problem with its index bookkeeping."""

    quad: StiefelQuadratic
    L_uu: sp.csr_matrix
    L_ul: sp.csr_matrix
    W_ul: sp.csr_matrix
    X_l: np.ndarray
    r: np.ndarray
    p: float
    p_tilde: float
    labeled: np.ndarray
    unlabeled: np.ndarray
    labels: LabelSet
    n_total: int

    @property
    def n(self):
        return self.unlabeled.size

    @property
    def m(self):
        return self.labeled.size

    @property
    def k(self):
        return self.labels.num_classes

    @property
    def B(self):
        return self.quad.B

    @property
    def C(self):
        return self.quad.C

    @property
    def C_half(self):
        return self.quad.C_half

    def objective(self, X):
        return self.quad.objective(X)

    def gradient(self, X):
        return self.quad.gradient(X)

    def multiplier(self, X, symmetrize=True):
        return self.quad.multiplier(X, symmetrize=symmetrize)

    def foc_residual(self, X, lam=None):
        return self.quad.foc_residual(X, lam=lam)

    def ones_direction(self):
        """Unit constant vector on the unlabeled block (deflation direction)."""
        n = self.n
        return np.full((n, 1), 1.0 / np.sqrt(n))


@dataclass
class Prediction:
    """Class scores (labeled rows one-hot) and argmax labels per vertex."""

    scores: np.ndarray
    labels: np.ndarray


def encode_labels(labels):
    """One-hot matrix X_l, row i = e_{y_i} (rows follow ``labels.indices`` order)."""
    X_l = np.zeros((len(labels), labels.num_classes))
    X_l[np.arange(len(labels)), labels.values] = 1.0
    return X_l


def assemble(graph, labels):
    """Build the partitioned problem for a graph and label set.

    Raises
    ------
    LabelBudgetError
        If C = pI - X_l^T X_l - rr^T/n fails to be positive definite
        (too many labels relative to the balanced class proportion).
    """
    if not isinstance(labels, LabelSet):
        raise TypeError("labels must be a LabelSet")
    M = graph.n_vertices
    m = len(labels)
    k = labels.num_classes
    if not 0 < m < M:
        raise ValueError("need 0 < m < M labeled vertices")

    blocks = grounded_blocks(graph, labels.indices)
    n = blocks.unlabeled.size
    X_l = encode_labels(labels)
    r = X_l.sum(axis=0)
    p = M / k
    p_tilde = m / k

    C_u = p * np.eye(k) - X_l.T @ X_l
    C = C_u - np.outer(r, r) / n
    w, _ = small_sym_eig(C)
    if w[0] <= 1e-12 * max(1.0, abs(w[-1])):
        raise LabelBudgetError(
            "label budget exceeds class proportion: C has min eigenvalue "
            "%.3e (p=%.3f, class counts %s)" % (w[0], p, r.astype(int).tolist())
        )

    W_ul = (-blocks.L_ul).tocsr()
    # attraction to labeled neighbors plus the centering correction; the 1/2
    # objective scaling is folded in so that grad F = AXC - BC^{1/2} verbatim
    boundary = np.asarray(blocks.L_uu.sum(axis=1)).ravel()  # L_uu @ 1
    B_hat = W_ul @ X_l + np.outer(boundary, r) / n
    B = B_hat - B_hat.mean(axis=0, keepdims=True)

    quad = StiefelQuadratic(centered_operator(blocks.L_uu), B, C)
    return PartitionedProblem(
        quad=quad,
        L_uu=blocks.L_uu,
        L_ul=blocks.L_ul,
        W_ul=W_ul,
        X_l=X_l,
        r=r,
        p=p,
        p_tilde=p_tilde,
        labeled=blocks.labeled,
        unlabeled=blocks.unlabeled,
        labels=labels,
        n_total=M,
    )


def objective(prob, X):
    return prob.objective(X)


def gradient(prob, X):
    return prob.gradient(X)


def multiplier_estimate(prob, X, symmetrize=True):
    return prob.multiplier(X, symmetrize=symmetrize)


def foc_residual(prob, X, lam=None):
    return prob.foc_residual(X, lam=lam)


def decode(prob, X_scaled):
    """Map a rescaled solution (X C^{1/2}) back to per-vertex class scores.

    Undoes the row centering by subtracting r^T/n, restores labeled rows to
    their one-hot targets, and takes the per-row argmax (lowest class index
    wins ties).
    """
    X_u = np.asarray(X_scaled) - prob.r[None, :] / prob.n
    scores = np.zeros((prob.n_total, prob.k))
    scores[prob.unlabeled] = X_u
    scores[prob.labels.indices] = encode_labels(prob.labels)
    labels = np.argmax(scores, axis=1)
    labels[prob.labels.indices] = prob.labels.values
    return Prediction(scores=scores, labels=labels)


def partitioned_objective(prob, X_u):
    """Pre-substitution objective <X_u, L_uu X_u> - 2 <X_u, W_ul X_l>.

    Evaluated on the original partitioned variable (second moment C_u, row
    sums -r^T). Used by the equivalence oracle against the rescaled problem.
    """
    return float(np.sum(X_u * (prob.L_uu @ X_u))) - 2.0 * float(
        np.sum(X_u * (prob.W_ul @ prob.X_l))
    )


def undo_substitutions(prob, X):
    """Map a feasible rescaled point (X^T X = I, mean-zero) back to the
    partitioned variable X_u."""
    return X @ prob.C_half - prob.r[None, :] / prob.n


def laplace_learning(graph, labels, tol=1e-10, precond="jacobi"):
    """Harmonic extension of the labels: solve L_uu X_u = W_ul X_l, decode.

    Raises
    ------
    UnlabeledComponentError
        If some connected component contains no labeled vertex.
    """
    if not isinstance(labels, LabelSet):
        raise TypeError("labels must be a LabelSet")
    comp = graph.component_labels
    labeled_comps = set(comp[labels.indices].tolist())
    missing = sorted(set(range(graph.n_components)) - labeled_comps)
    if missing:
        raise UnlabeledComponentError(
            "connected component(s) %s contain no labeled vertex" % missing
        )
    blocks = grounded_blocks(graph, labels.indices)
    X_l = encode_labels(labels)
    rhs = (-blocks.L_ul) @ X_l
    diag = blocks.L_uu.diagonal()
    op = LinOp(blocks.L_uu.shape[0], lambda x: blocks.L_uu @ x, diag=diag)
    X_u = np.zeros_like(rhs)
    for j in range(rhs.shape[1]):
        res = cg_solve(op, rhs[:, j], tol=tol, precond=precond)
        X_u[:, j] = res.x
    M = graph.n_vertices
    scores = np.zeros((M, labels.num_classes))
    scores[blocks.unlabeled] = X_u
    scores[labels.indices] = X_l
    pred_labels = np.argmax(scores, axis=1)
    pred_labels[labels.indices] = labels.values
    return Prediction(scores=scores, labels=pred_labels)


@dataclass
class CertificateReport:
    """Global-optimality certificate output (inconclusive is a valid answer)."""

    certified: bool
    s1: float
    d1: float
    dk: float
    lambda_max: float
    lambda_spectrum: np.ndarray
    extrapolated: bool


def global_certificate(prob, X, eigen=None, tol=1e-8):
    """Check the spectral-gap certificate at a stationary point.

    Rewrites the stationarity system as A X = B C^{-1/2} + X (Lambda C^{-1})
    and certifies global optimality when sigma_min(V^T B C^{-1/2}) exceeds
    d_k - d_1 and all multiplier eigenvalues sit below d_1. V holds the k
    smallest nontrivial eigenvectors of A. ``extrapolated`` flags evaluation
    outside the proven regime (k > 2 or C not a scalar matrix).
    """
    quad = prob.quad if isinstance(prob, PartitionedProblem) else prob
    k = quad.k
    if eigen is None:
        deflate = (
            prob.ones_direction() if isinstance(prob, PartitionedProblem) else None
        )
        eigen = smallest_eigenpairs(as_linop(quad.A), k, deflate=deflate)
    V = eigen.vectors[:, :k]
    d = eigen.values
    d1, dk = float(d[0]), float(d[k - 1])
    B_eff = quad.B @ quad.C_invhalf
    s = np.linalg.svd(V.T @ B_eff, compute_uv=False)
    s1 = float(s[-1])
    lam_eigs = quad.multiplier_spectrum(X)
    lam_max = float(lam_eigs[-1])
    scalar_c = np.trace(quad.C) / k
    extrapolated = k > 2 or not np.allclose(
        quad.C, scalar_c * np.eye(k), atol=1e-10 * max(1.0, abs(scalar_c))
    )
    certified = (s1 > dk - d1 + tol) and (lam_max < d1 - tol)
    return CertificateReport(
        certified=bool(certified),
        s1=s1,
        d1=d1,
        dk=dk,
        lambda_max=lam_max,
        lambda_spectrum=lam_eigs,
        extrapolated=extrapolated,
    )
