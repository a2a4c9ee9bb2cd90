"""Sparse symmetric solvers, eigensolvers, and Stiefel-manifold kernels.

Everything here is matrix-free friendly: operators are sparse matrices,
ndarrays, or :class:`LinOp` wrappers around a callable. Dense routines
(eigh/svd) double as the oracle route in the test suite, so the iterative
paths never share code with them.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class IndefiniteOperatorError(ArithmeticError):
    """CG met negative curvature: the operator is not PSD on the search space."""


class EigenSolveError(RuntimeError):
    """Eigensolver failed to reach the requested residual tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class RankDeficiencyError(np.linalg.LinAlgError):
    """A projection/factorization input was (numerically) rank deficient."""


class LinOp:
    """Symmetric linear operator of dimension ``dim`` applied via a callable.

    Accepts vectors or (n, k) blocks. Use :meth:`from_matrix` for sparse or
    dense matrices and :meth:`to_dense` to materialize small operators.
    """

    __slots__ = ("dim", "_apply", "_diag")

    def __init__(self, dim, apply, diag=None):
        self.dim = dim
        self._apply = apply
        self._diag = diag

    def __call__(self, x):
        return self._apply(x)

    def __matmul__(self, x):
        return self._apply(x)

    @classmethod
    def from_matrix(cls, A):
        if isinstance(A, cls):
            return A
        if sp.issparse(A):
            A = A.tocsr()
            return cls(A.shape[0], lambda x: A @ x, diag=A.diagonal())
        A = np.asarray(A, dtype=np.float64)
        return cls(A.shape[0], lambda x: A @ x, diag=np.diag(A).copy())

    @property
    def diagonal(self):
        return self._diag

    def to_dense(self):
        return np.asarray(self @ np.eye(self.dim))

    def shifted(self, s):
        """Operator A + s*I."""
        diag = None if self._diag is None else self._diag + s
        return LinOp(self.dim, lambda x, _a=self._apply, _s=s: _a(x) + _s * x, diag)


def as_linop(A):
    return LinOp.from_matrix(A)


def centered_operator(A):
    """P A P with P = I - 11^T/n, the mean-removal projector on both sides."""
    A = as_linop(A)
    n = A.dim

    def apply(x):
        x0 = x - np.mean(x, axis=0, keepdims=True) if x.ndim > 1 else x - x.mean()
        y = A(x0)
        return y - np.mean(y, axis=0, keepdims=True) if y.ndim > 1 else y - y.mean()

    # diag(PAP) is not cheaply available; callers precondition on A if needed
    return LinOp(n, apply)


def _orthonormal_columns(V, tol=1e-12):
    """Orthonormal basis for the column span of V (columns dropped if dependent)."""
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    if V.shape[0] == 1:
        V = V.T
    Q, R = np.linalg.qr(V)
    keep = np.abs(np.diag(R)) > tol * max(1.0, np.abs(R).max())
    return Q[:, keep]


def _project_out(x, Q):
    if Q is None or Q.shape[1] == 0:
        return x
    return x - Q @ (Q.T @ x)


@dataclass
class CgResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual: float


def _jacobi_precond(A):
    d = A.diagonal if isinstance(A, LinOp) else None
    if d is None:
        raise ValueError(
            "Jacobi preconditioning needs an operator with a known diagonal"
        )
    d = np.where(np.abs(d) > 1e-300, d, 1.0)
    return lambda r: r / d


def _multigrid_precond(A):
    try:
        import pyamg
    except ImportError as exc:  # pragma: no cover - optional tier
        raise ImportError(
            "multigrid preconditioning requires the optional pyamg dependency"
        ) from exc
    if not sp.issparse(A):
        raise ValueError("multigrid preconditioning needs an explicit sparse matrix")
    ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(A))
    M = ml.aspreconditioner(cycle="V")
    return lambda r: M @ r


def cg_solve(A, b, tol=1e-10, max_iter=None, precond=None, deflate=None):
    """Conjugate gradient for symmetric positive (semi)definite systems.

    Parameters
    ----------
    A : sparse matrix, ndarray, or LinOp
    b : ndarray
        Right-hand side. If A is singular the caller must supply ``deflate``
        spanning the null directions (b and all iterates are projected).
    tol : float
        Relative residual target ||Ax - b|| / ||b||.
    max_iter : int or None
        Defaults to 10 * dim. On budget exhaustion the best iterate is
        returned with ``converged=False`` (no exception).
    precond : None, "jacobi", "multigrid", or callable r -> z
    deflate : ndarray (dim, p) or None
        Directions projected out of b and every iterate.

    Raises
    ------
    IndefiniteOperatorError
        If negative curvature is detected.
    """
    Aop = as_linop(A)
    n = Aop.dim
    b = np.asarray(b, dtype=np.float64)
    if max_iter is None:
        max_iter = 10 * n
    Q = _orthonormal_columns(deflate) if deflate is not None else None

    if precond is None:
        M = None
    elif callable(precond):
        M = precond
    elif precond == "jacobi":
        M = _jacobi_precond(Aop if Aop.diagonal is not None else A)
    elif precond == "multigrid":
        M = _multigrid_precond(A)
    else:
        raise ValueError("unknown preconditioner %r" % (precond,))

    b = _project_out(b, Q)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CgResult(np.zeros(n), True, 0, 0.0)

    x = np.zeros(n)
    r = b.copy()
    z = M(r) if M is not None else r
    z = _project_out(z, Q)
    p = z.copy()
    rz = float(r @ z)
    best_x, best_res = x.copy(), np.linalg.norm(r) / bnorm

    for it in range(1, max_iter + 1):
        Ap = Aop(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            if pAp < -1e-12 * float(p @ p):
                raise IndefiniteOperatorError(
                    "negative curvature encountered (p^T A p = %.3e)" % pAp
                )
            break  # numerically null direction: stop with current iterate
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        x = _project_out(x, Q)
        r = _project_out(r, Q)
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            return CgResult(x, True, it, res)
        z = M(r) if M is not None else r
        z = _project_out(z, Q)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return CgResult(best_x, best_res <= tol, max_iter, best_res)


@dataclass
class EigenPairs:
    """Ascending eigenvalues with orthonormal eigenvectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray
    deflated: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def _fix_signs(V, tol=1e-10):
    """Make the first entry of nonnegligible magnitude positive, per column."""
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        nz = np.flatnonzero(np.abs(col) > tol * max(1.0, np.abs(col).max()))
        if nz.size and col[nz[0]] < 0:
            V[:, j] = -col
    return V


def _operator_norm_estimate(A, rng, iters=20):
    v = rng.standard_normal(A.dim)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iters):
        w = A(v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 1.0
        v = w / lam
    return max(lam, 1e-30)


def smallest_eigenpairs(
    A,
    k,
    deflate=None,
    tol=1e-8,
    max_iter=200,
    dense_cutoff=600,
    rng=None,
):
    """The k smallest eigenpairs of a symmetric PSD operator, deflated.

    Below ``dense_cutoff`` the operator is materialized and reduced on the
    orthogonal complement of the deflation set (exact route). Above it, block
    inverse iteration with Rayleigh-Ritz runs through :func:`cg_solve`; a tiny
    ridge keeps the solves positive definite when A itself is singular.

    Raises
    ------
    EigenSolveError
        If the iteration budget is exhausted before residuals reach
        ``tol * ||A||``.
    """
    Aop = as_linop(A) if not isinstance(A, LinOp) else A
    n = Aop.dim
    Q = _orthonormal_columns(deflate) if deflate is not None else None
    p = 0 if Q is None else Q.shape[1]
    if k + p >= n + 1:
        raise ValueError("k + |deflate| must be < dim")
    if rng is None:
        rng = np.random.default_rng(0x5EED)

    if n <= dense_cutoff:
        Ad = Aop.to_dense()
        Ad = 0.5 * (Ad + Ad.T)
        if Q is None:
            w, V = np.linalg.eigh(Ad)
            vals, vecs = w[:k], V[:, :k]
        else:
            F = _complement_basis(Q)
            w, Y = np.linalg.eigh(F.T @ Ad @ F)
            vals, vecs = w[:k], F @ Y[:, :k]
        return EigenPairs(vals, _fix_signs(vecs), Q if Q is not None else np.zeros((n, 0)))

    norm_est = _operator_norm_estimate(Aop, rng)
    ridge = 1e-8 * norm_est
    solver_op = Aop.shifted(ridge)
    block = min(n - p, k + 3)
    X = rng.standard_normal((n, block))
    X = _project_out(X, Q)
    X, _ = np.linalg.qr(X)
    vals = np.zeros(k)
    for _ in range(max_iter):
        Y = np.empty_like(X)
        for j in range(X.shape[1]):
            res = cg_solve(
                solver_op, X[:, j], tol=1e-2 * tol, max_iter=20 * n, deflate=Q
            )
            Y[:, j] = res.x
        Y = _project_out(Y, Q)
        Y, _ = np.linalg.qr(Y)
        H = Y.T @ Aop(Y)
        H = 0.5 * (H + H.T)
        w, S = np.linalg.eigh(H)
        X = Y @ S
        vals = w[:k]
        R = Aop(X[:, :k]) - X[:, :k] * vals
        resid = np.linalg.norm(R, axis=0)
        if np.all(resid <= tol * max(norm_est, 1.0)):
            return EigenPairs(
                vals, _fix_signs(X[:, :k]), Q if Q is not None else np.zeros((n, 0))
            )
    raise EigenSolveError(
        "eigensolver did not converge in %d iterations" % max_iter,
        residuals=resid,
    )


def _complement_basis(Q):
    """Orthonormal basis of the orthogonal complement of span(Q)."""
    n, p = Q.shape
    full, _ = np.linalg.qr(np.hstack([Q, np.eye(n)]))
    # columns p..n-1 of a rank-revealing completion
    F = full[:, p:n]
    # re-project for safety against rounding
    F = F - Q @ (Q.T @ F)
    F, _ = np.linalg.qr(F)
    return F


def stiefel_project(X, tol=1e-12):
    """Frobenius-nearest point with orthonormal columns: U V^T from thin SVD."""
    X = np.asarray(X, dtype=np.float64)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s[-1] <= tol * max(1.0, s[0]):
        raise RankDeficiencyError(
            "column-rank-deficient input: projection onto the Stiefel manifold "
            "is not unique (sigma_min = %.3e)" % s[-1]
        )
    return U @ Vt


def stiefel_project_differential(X, T):
    """Closed-form differential of the Stiefel projection at feasible X."""
    XtT = X.T @ T
    return (T - X @ XtT) + 0.5 * X @ (XtT - XtT.T)


def project_onto_cone(X1, B, tol=1e-12):
    """Nearest feasible point (up to rotation) with X^T B symmetric PSD.

    Two-SVD composition: X1 = U1 S1 V1^T, then U1^T B = U2 S2 V2^T, returning
    U1 U2 V2^T.
    """
    X1 = np.asarray(X1, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    U1, s1, _ = np.linalg.svd(X1, full_matrices=False)
    if s1[-1] <= tol * max(1.0, s1[0]):
        raise RankDeficiencyError("X1 is rank deficient (sigma_min = %.3e)" % s1[-1])
    M = U1.T @ B
    U2, s2, V2t = np.linalg.svd(M)
    if s2[-1] <= tol * max(1.0, s2[0]):
        raise RankDeficiencyError(
            "U1^T B is rank deficient (sigma_min = %.3e): projection onto the "
            "PSD-aligned set is not unique" % s2[-1]
        )
    return U1 @ U2 @ V2t


def projected_shifted_pinv_apply(
    A, basis, shift, rhs, tol=1e-10, max_iter=None, deflate=None
):
    """Solve (Pp A Pp - shift * Pp) o = Pp rhs with Pp = I - basis basis^T.

    The solution satisfies basis^T o = 0. Extra ``deflate`` directions (for
    instance the constant vector when A annihilates it) are projected out as
    well, which makes the CG solve match the dense pseudoinverse.

    Raises
    ------
    IndefiniteOperatorError
        If the shifted operator is indefinite on the search space.
    """
    Aop = as_linop(A) if not isinstance(A, LinOp) else A
    n = Aop.dim
    rhs = np.asarray(rhs, dtype=np.float64)
    cols = []
    if basis is not None and np.size(basis):
        cols.append(np.atleast_2d(np.asarray(basis, dtype=np.float64)))
        if cols[-1].shape[0] == 1:
            cols[-1] = cols[-1].T
    if deflate is not None and np.size(deflate):
        extra = np.atleast_2d(np.asarray(deflate, dtype=np.float64))
        if extra.shape[0] == 1:
            extra = extra.T
        cols.append(extra)
    Q = _orthonormal_columns(np.hstack(cols)) if cols else None

    if Q is None:
        op = Aop if shift == 0.0 else Aop.shifted(-shift)
        return cg_solve(op, rhs, tol=tol, max_iter=max_iter).x

    def apply(x):
        x = _project_out(x, Q)
        y = Aop(x) - shift * x
        return _project_out(y, Q)

    op = LinOp(n, apply)
    res = cg_solve(op, _project_out(rhs, Q), tol=tol, max_iter=max_iter, deflate=Q)
    return res.x


def small_sym_eig(M):
    """Eigendecomposition of a small symmetric matrix, ascending, signs fixed."""
    M = np.asarray(M, dtype=np.float64)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return w, _fix_signs(V)


def small_svd(M):
    """Thin SVD of a small dense matrix."""
    return np.linalg.svd(np.asarray(M, dtype=np.float64), full_matrices=False)


def sqrt_and_invsqrt(C, tol=1e-12):
    """(C^{1/2}, C^{-1/2}) of an SPD matrix via eigendecomposition."""
    C = np.asarray(C, dtype=np.float64)
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    if w[0] <= tol * max(1.0, w[-1]):
        raise np.linalg.LinAlgError(
            "matrix is not positive definite (min eigenvalue %.3e)" % w[0]
        )
    half = (V * np.sqrt(w)) @ V.T
    invhalf = (V / np.sqrt(w)) @ V.T
    return half, invhalf


def is_orthonormal(X, tol=1e-10):
    X = np.asarray(X)
    G = X.T @ X
    return np.linalg.norm(G - np.eye(X.shape[1])) <= tol


def random_stiefel(n, k, rng, mean_zero=False):
    """Random point with orthonormal columns (QR of a Gaussian, signs fixed)."""
    G = rng.standard_normal((n, k))
    if mean_zero:
        G = G - G.mean(axis=0, keepdims=True)
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
