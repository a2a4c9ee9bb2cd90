"""Iterative refinement: projected gradient, SQP directions, subspace solves.

The outer loop alternates a Newton-type direction from the linearized
stationarity system with an exact solve of the problem compressed onto
span(X, Z, eigenvector estimates, gradient). Objective values are
non-increasing by construction; eigenvector estimates are refreshed from
each reduced problem at no extra cost.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    IndefiniteOperatorError,
    RankDeficiencyError,
    as_linop,
    projected_shifted_pinv_apply,
    small_sym_eig,
    smallest_eigenpairs,
    stiefel_project,
    project_onto_cone,
)
from .problem import PartitionedProblem, StiefelQuadratic
from .align import procrustes_align


@dataclass
class SsmConfig:
    """Solver knobs; Armijo triple (s, sigma, beta) uses standard values."""

    foc_tol: float = 1e-6
    max_outer: int = 50
    armijo_s: float = 1.0
    armijo_sigma: float = 1e-4
    armijo_beta: float = 0.5
    max_backtracks: int = 60
    subspace_inner_iters: int = 200
    subspace_foc_tol: float = 1e-8
    subspace_restarts: int = 6
    include_eigvecs: int = None  # defaults to k
    safeguard_shifts: bool = False
    cg_tol: float = 1e-10
    stall_rel_decrease: float = 1e-3
    stall_window: int = 5

    def __post_init__(self):
        if not 0 < self.armijo_sigma < 1:
            raise ValueError("armijo_sigma must lie in (0, 1)")
        if not 0 < self.armijo_beta < 1:
            raise ValueError("armijo_beta must lie in (0, 1)")
        if self.armijo_s <= 0:
            raise ValueError("armijo_s must be positive")


@dataclass
class SolverState:
    """Terminal state of an outer solve plus per-iteration histories."""

    X: np.ndarray
    Lambda: np.ndarray
    gradient: np.ndarray
    Z: np.ndarray
    eig_values: np.ndarray
    eig_vectors: np.ndarray
    foc_history: list = field(default_factory=list)
    obj_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stalled: bool = False
    eig_refreshed: bool = False


@dataclass
class PgdResult:
    X: np.ndarray
    converged: bool
    stalled: bool
    iterations: int
    obj_history: list
    foc_history: list


def pgd_armijo(
    quad,
    X0,
    foc_tol=1e-8,
    max_iter=200,
    s=1.0,
    sigma=1e-4,
    beta=0.5,
    max_backtracks=60,
    cone=False,
    deflate=None,
):
    """Projected gradient descent with Armijo backtracking on the manifold.

    Steps along the full Euclidean gradient and projects back with the SVD
    polar factor (or the PSD-cone composition when ``cone`` is set). The
    sufficient-decrease test uses the Riemannian gradient norm, which equals
    the first-order stationarity residual, so objectives are monotone and
    termination at ``foc_tol`` is exactly stationarity.

    ``deflate`` pins iterates orthogonal to the given directions. The
    assembled problems live on the mean-zero slice of the manifold (the
    operator annihilates the constant vector), and without the projection
    rounding noise along such null directions gets amplified into infeasible
    points of the original partitioned problem.
    """
    Q = _deflation_basis(deflate)
    X = np.asarray(X0, dtype=np.float64).copy()
    if Q is not None:
        X = stiefel_project(X - Q @ (Q.T @ X))
    obj_history = []
    foc_history = []
    stalled = False
    converged = False
    it = 0
    F0 = quad.objective(X)
    for it in range(max_iter + 1):
        g = quad.gradient(X)
        if Q is not None:
            g = g - Q @ (Q.T @ g)
        lam = X.T @ g
        lam = 0.5 * (lam + lam.T)
        riem = g - X @ lam
        foc = float(np.linalg.norm(riem))
        obj_history.append(F0)
        foc_history.append(foc)
        if foc <= foc_tol:
            converged = True
            break
        if it == max_iter:
            break
        gnorm2 = foc * foc
        alpha = s
        accepted = False
        for _ in range(max_backtracks):
            step = X - alpha * g
            if Q is not None:
                step = step - Q @ (Q.T @ step)
            try:
                if cone:
                    X_new = project_onto_cone(step, quad.B)
                else:
                    X_new = stiefel_project(step)
            except RankDeficiencyError:
                alpha *= beta
                continue
            F1 = quad.objective(X_new)
            if F0 - F1 >= sigma * alpha * gnorm2:
                accepted = True
                break
            alpha *= beta
        if not accepted:
            stalled = True
            break
        X = X_new
        F0 = F1
    return PgdResult(
        X=X,
        converged=converged,
        stalled=stalled,
        iterations=it,
        obj_history=obj_history,
        foc_history=foc_history,
    )


def _deflation_basis(deflate):
    if deflate is None or np.size(deflate) == 0:
        return None
    Q = np.atleast_2d(np.asarray(deflate, dtype=np.float64))
    if Q.shape[0] == 1:
        Q = Q.T
    Qn, _ = np.linalg.qr(Q)
    return Qn


def sqp_direction(
    quad,
    X,
    lam,
    safeguard_shifts=False,
    eig_floor=None,
    cg_tol=1e-10,
    deflate=None,
):
    """Newton-type direction from the linearized stationarity system.

    Eigendecomposes C^{-1/2} Lambda C^{-1/2} = U diag(lambda_j) U^T and
    solves, per column, (Pp A Pp - lambda_j Pp) o_j = Pp (E C^{-1/2} U)_j
    with E = B C^{1/2} - (A X C - X Lambda), returning Z = O U^T with
    X^T Z = 0. Shifts are dropped per column when the safeguard rejects
    them, or on detected indefiniteness (with a warning).
    """
    lam = 0.5 * (lam + lam.T)
    E = X @ lam - quad.gradient(X)  # zero at stationary points
    w, U = small_sym_eig(quad.C_invhalf @ lam @ quad.C_invhalf)
    Rhs = E @ quad.C_invhalf @ U
    n, k = X.shape
    O = np.zeros((n, k))
    for j in range(k):
        shift = float(w[j])
        if safeguard_shifts and eig_floor is not None and shift >= eig_floor - 1e-10:
            shift = 0.0
        try:
            O[:, j] = projected_shifted_pinv_apply(
                quad.A, X, shift, Rhs[:, j], tol=cg_tol, deflate=deflate
            )
        except IndefiniteOperatorError:
            warnings.warn(
                "shifted SQP solve was indefinite; falling back to shift 0",
                RuntimeWarning,
                stacklevel=2,
            )
            O[:, j] = projected_shifted_pinv_apply(
                quad.A, X, 0.0, Rhs[:, j], tol=cg_tol, deflate=deflate
            )
    Z = O @ U.T
    return Z - X @ (X.T @ Z)


def build_subspace(X, *column_blocks, tol=1e-10):
    """Orthonormal basis for span(X, blocks...), dependent columns dropped.

    X's columns (assumed orthonormal) lead the basis, so X lies in the span
    exactly and warm starts lift back to the current iterate.
    """
    basis = [np.asarray(X, dtype=np.float64)]
    width = X.shape[1]
    Q = basis[0]
    for block in column_blocks:
        if block is None:
            continue
        block = np.atleast_2d(np.asarray(block, dtype=np.float64))
        if block.shape[0] == 1:
            block = block.T
        for j in range(block.shape[1]):
            c = block[:, j]
            scale = np.linalg.norm(c)
            if scale <= tol:
                continue
            for _ in range(2):  # twice-is-enough re-orthogonalization
                c = c - Q @ (Q.T @ c)
            norm = np.linalg.norm(c)
            if norm <= tol * max(1.0, scale):
                continue
            c = c / norm
            Q = np.hstack([Q, c[:, None]])
            width += 1
    return Q


def solve_subspace(quad, V, X_warm=None, config=None):
    """Solve the compressed problem min F(X; V^T A V, V^T B) on the manifold.

    The reduced dimension is at most ~4k, so on top of the warm start a few
    deterministic restarts (aligned reduced eigenvectors plus seeded random
    points) are polished and the best kept. The warm start is always among
    the candidates, which keeps the outer objective monotone. A dense
    Newton polish finishes the winner: projected gradient alone converges
    too slowly in its tail for the lifted stationarity residual to track
    the outer tolerance.
    """
    cfg = config or SsmConfig()
    red = quad.reduced(V)
    dim, k = V.shape[1], quad.k
    starts = []
    if X_warm is not None:
        starts.append(np.asarray(X_warm, dtype=np.float64))
    w_red, S_red = small_sym_eig(red.A)
    eig_start = S_red[:, :k]
    try:
        eig_start = procrustes_align(eig_start, red.B, on_deficiency="complete").X
    except RankDeficiencyError:
        pass
    starts.append(eig_start)
    rng = np.random.default_rng(0xD1CE)
    for _ in range(max(cfg.subspace_restarts - len(starts), 0)):
        G = rng.standard_normal((dim, k))
        Q, R = np.linalg.qr(G)
        starts.append(Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R))))

    def descend(X0, budget):
        res = pgd_armijo(
            red,
            X0,
            foc_tol=cfg.subspace_foc_tol,
            max_iter=budget,
            s=cfg.armijo_s,
            sigma=cfg.armijo_sigma,
            beta=cfg.armijo_beta,
            max_backtracks=cfg.max_backtracks,
        )
        return _newton_polish(red, res.X, cfg.subspace_foc_tol)

    # short exploration per start picks the basin; Newton finishes it
    explore = min(cfg.subspace_inner_iters, 60)
    best = None
    for X0 in starts:
        X = descend(X0, explore)
        f = red.objective(X)
        if best is None or f < best[0] - 1e-14:
            best = (f, X)
    f, X = best
    if (
        red.foc_residual(X) > cfg.subspace_foc_tol
        and cfg.subspace_inner_iters > explore
    ):
        X2 = descend(X, cfg.subspace_inner_iters - explore)
        if red.objective(X2) <= f:
            X = X2
    return X, red


def _dense_sqp_direction(red, X, lam):
    """SQP direction with exact dense pseudoinverse solves (small problems)."""
    A = np.asarray(red.A)
    n = A.shape[0]
    Pp = np.eye(n) - X @ X.T
    E = X @ lam - red.gradient(X)
    w, U = small_sym_eig(red.C_invhalf @ lam @ red.C_invhalf)
    Rhs = Pp @ (E @ red.C_invhalf @ U)
    O = np.zeros_like(X)
    for j in range(X.shape[1]):
        M = Pp @ A @ Pp - w[j] * Pp
        O[:, j] = np.linalg.pinv(M, rcond=1e-12) @ Rhs[:, j]
    Z = O @ U.T
    return Z - X @ (X.T @ Z)


def _newton_polish(red, X, foc_tol, max_steps=25):
    """Drive the reduced stationarity residual down with damped SQP steps.

    A step is accepted only when it shrinks the residual and does not raise
    the objective beyond rounding, so monotonicity of the outer loop holds.
    """
    F = red.objective(X)
    foc = red.foc_residual(X)
    for _ in range(max_steps):
        if foc <= foc_tol:
            break
        lam = red.multiplier(X)
        Z = _dense_sqp_direction(red, X, lam)
        step = 1.0
        improved = False
        for _ in range(8):
            try:
                Xn = stiefel_project(X + step * Z)
            except RankDeficiencyError:
                step *= 0.5
                continue
            Fn = red.objective(Xn)
            focn = red.foc_residual(Xn)
            if focn < 0.9 * foc and Fn <= F + 1e-12 * max(1.0, abs(F)):
                X, F, foc = Xn, min(F, Fn), focn
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return X


def ssm_solve(problem, X0=None, config=None, deflate=None, eig0=None, trace=None):
    """Sequential subspace solve of the rescaled quadratic program.

    Parameters
    ----------
    problem : PartitionedProblem or StiefelQuadratic
    X0 : ndarray or None
        Feasible start; defaults to the Procrustes-aligned eigenmap.
    config : SsmConfig or None
    deflate : ndarray or None
        Null/excluded directions of the operator (the constant vector is
        added automatically for assembled problems).
    eig0 : EigenPairs or None
        Reusable eigenpair estimates (skips the initial eigensolve).
    trace : callable(dict) or None
        Per-iteration record hook (FOC, objective, multiplier spectrum).

    Returns
    -------
    (X_scaled, SolverState)
        ``X_scaled = X @ C^{1/2}`` feeds ``decode``; the state holds the
        feasible iterate and histories. Non-convergence is reported through
        ``state.converged`` rather than an exception.
    """
    cfg = config or SsmConfig()
    if isinstance(problem, PartitionedProblem):
        quad = problem.quad
        if deflate is None:
            deflate = problem.ones_direction()
    else:
        quad = problem
    k = quad.k
    n_eig = cfg.include_eigvecs or k

    if eig0 is not None:
        eig_values = np.asarray(eig0.values, dtype=np.float64)
        eig_vectors = np.asarray(eig0.vectors, dtype=np.float64)
    else:
        pairs = smallest_eigenpairs(as_linop(quad.A), n_eig, deflate=deflate)
        eig_values, eig_vectors = pairs.values, pairs.vectors

    if X0 is None:
        try:
            X = procrustes_align(eig_vectors[:, :k], quad.B, on_deficiency="complete").X
        except RankDeficiencyError:
            X = eig_vectors[:, :k].copy()
    else:
        X = np.asarray(X0, dtype=np.float64).copy()

    state = SolverState(
        X=X,
        Lambda=np.zeros((k, k)),
        gradient=np.zeros_like(X),
        Z=np.zeros_like(X),
        eig_values=eig_values,
        eig_vectors=eig_vectors,
    )
    stall_strikes = 0

    for it in range(cfg.max_outer + 1):
        g = quad.gradient(X)
        lam = X.T @ g
        lam = 0.5 * (lam + lam.T)
        foc = float(np.linalg.norm(g - X @ lam))
        obj = quad.objective(X)
        if __debug__ and state.obj_history:
            assert np.linalg.norm(X.T @ X - np.eye(k)) <= 1e-8, (
                "iterate left the manifold"
            )
            assert obj <= state.obj_history[-1] + 1e-9 * max(
                1.0, abs(state.obj_history[-1])
            ), "objective increased across an outer iteration"
        state.foc_history.append(foc)
        state.obj_history.append(obj)
        state.X, state.Lambda, state.gradient = X, lam, g
        state.iterations = it
        if trace is not None:
            spectrum, _ = small_sym_eig(quad.C_invhalf @ lam @ quad.C_invhalf)
            trace(
                {
                    "iter": it,
                    "foc": foc,
                    "objective": obj,
                    "lambda_spectrum": spectrum.tolist(),
                }
            )
        if foc <= cfg.foc_tol:
            state.converged = True
            break
        if it == cfg.max_outer:
            break

        # stall handling: refresh exact eigenvectors once, then stop
        h = state.foc_history
        if len(h) > cfg.stall_window:
            prev = h[-1 - cfg.stall_window]
            if prev - foc < cfg.stall_rel_decrease * max(prev, 1e-300):
                if not state.eig_refreshed:
                    pairs = smallest_eigenpairs(
                        as_linop(quad.A), n_eig, deflate=deflate
                    )
                    eig_values, eig_vectors = pairs.values, pairs.vectors
                    state.eig_refreshed = True
                    stall_strikes = 0
                else:
                    stall_strikes += 1
                    if stall_strikes >= cfg.stall_window:
                        state.stalled = True
                        break

        Z = sqp_direction(
            quad,
            X,
            lam,
            safeguard_shifts=cfg.safeguard_shifts,
            eig_floor=float(eig_values[0]),
            cg_tol=cfg.cg_tol,
            deflate=deflate,
        )
        state.Z = Z
        V = build_subspace(X, Z, eig_vectors, g)
        X_warm = stiefel_project(V.T @ X)
        X_red, red = solve_subspace(quad, V, X_warm, cfg)
        X = V @ X_red
        # free eigenpair estimates from the compressed operator
        w_red, S_red = small_sym_eig(red.A)
        take = min(n_eig, w_red.size)
        eig_values = w_red[:take]
        eig_vectors = V @ S_red[:, :take]

    state.eig_values = eig_values
    state.eig_vectors = eig_vectors
    return X @ quad.C_half, state
