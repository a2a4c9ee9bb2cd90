import numpy as np
import pytest

import spectralign as sa
from spectralign.linalg import (
    IndefiniteOperatorError,
    RankDeficiencyError,
    as_linop,
    centered_operator,
    cg_solve,
    project_onto_cone,
    projected_shifted_pinv_apply,
    small_svd,
    small_sym_eig,
    smallest_eigenpairs,
    sqrt_and_invsqrt,
    stiefel_project,
    stiefel_project_differential,
    random_stiefel,
)

rng = np.random.default_rng(77)


def random_laplacian(n, density=0.5):
    A = np.triu(rng.random((n, n)) < density, 1) * rng.random((n, n))
    A = A + A.T
    g = sa.Graph(A)
    if not g.is_connected:
        return random_laplacian(n, density)
    return g.laplacian()


class TestCg:
    def test_identity_one_iteration(self):
        b = rng.standard_normal(6)
        res = cg_solve(np.eye(6), b)
        assert res.iterations == 1
        assert np.allclose(res.x, b)

    def test_zero_rhs(self):
        res = cg_solve(np.eye(4), np.zeros(4))
        assert np.array_equal(res.x, np.zeros(4))
        assert res.iterations == 0

    def test_grounded_path_dense_oracle(self):
        # 3-path with endpoint 0 labeled: L_uu over {1, 2}
        L_uu = np.array([[2.0, -1.0], [-1.0, 1.0]])
        b = np.array([1.0, 0.0])
        res = cg_solve(L_uu, b, tol=1e-12)
        assert np.allclose(res.x, np.linalg.solve(L_uu, b), atol=1e-10)

    def test_preconditioner_agreement(self):
        L = random_laplacian(20)
        A = L.toarray() + 0.5 * np.eye(20)
        b = rng.standard_normal(20)
        x0 = cg_solve(A, b, tol=1e-12).x
        x1 = cg_solve(as_linop(A), b, tol=1e-12, precond="jacobi").x
        assert np.allclose(x0, x1, atol=1e-9)

    def test_multigrid_preconditioner(self):
        pytest.importorskip("pyamg")
        import scipy.sparse as sp

        L = random_laplacian(60)
        A = (L + 0.1 * sp.eye(60)).tocsr()
        b = rng.standard_normal(60)
        res = cg_solve(A, b, tol=1e-10, precond="multigrid")
        assert res.converged
        assert np.linalg.norm(A @ res.x - b) <= 1e-8 * np.linalg.norm(b)

    def test_negative_curvature_raises(self):
        A = np.diag([1.0, -1.0])
        with pytest.raises(IndefiniteOperatorError):
            cg_solve(A, np.array([1.0, 2.0]))

    def test_budget_returns_best_iterate(self):
        A = random_laplacian(30).toarray() + 1e-3 * np.eye(30)
        res = cg_solve(A, rng.standard_normal(30), tol=1e-14, max_iter=2)
        assert not res.converged
        assert res.residual > 0

    def test_deflated_singular_solve(self):
        L = random_laplacian(12)
        ones = np.full((12, 1), 1 / np.sqrt(12))
        b = rng.standard_normal(12)
        b -= b.mean()
        res = cg_solve(as_linop(L), b, tol=1e-12, deflate=ones)
        r = L @ res.x - b
        assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(b)
        assert abs(res.x.mean()) < 1e-12


class TestSmallestEigenpairs:
    def test_path3_deflated(self):
        A = np.zeros((3, 3))
        A[0, 1] = A[1, 0] = A[1, 2] = A[2, 1] = 1.0
        L = sa.Graph(A).laplacian()
        ones = np.full((3, 1), 1 / np.sqrt(3))
        eig = smallest_eigenpairs(as_linop(L), 1, deflate=ones)
        assert eig.values[0] == pytest.approx(1.0, abs=1e-10)
        v = eig.vectors[:, 0]
        expected = np.array([1.0, 0.0, -1.0]) / np.sqrt(2)
        assert min(np.linalg.norm(v - expected), np.linalg.norm(v + expected)) < 1e-8

    def test_two_vertex(self):
        L = sa.Graph(np.array([[0.0, 1.0], [1.0, 0.0]])).laplacian()
        ones = np.full((2, 1), 1 / np.sqrt(2))
        eig = smallest_eigenpairs(as_linop(L), 1, deflate=ones)
        assert eig.values[0] == pytest.approx(2.0, abs=1e-10)
        v = eig.vectors[:, 0]
        expected = np.array([1.0, -1.0]) / np.sqrt(2)
        assert min(np.linalg.norm(v - expected), np.linalg.norm(v + expected)) < 1e-8

    def test_barbell_matches_dense(self, barbell5):
        L = barbell5.laplacian()
        ones = np.full((10, 1), 1 / np.sqrt(10))
        eig = smallest_eigenpairs(as_linop(L), 1, deflate=ones)
        w = np.linalg.eigvalsh(L.toarray())
        assert abs(eig.values[0] - w[1]) < 1e-8

    @pytest.mark.parametrize("n", [16, 40, 64])
    def test_matches_dense_oracle(self, n):
        L = random_laplacian(n, density=0.3)
        ones = np.full((n, 1), 1 / np.sqrt(n))
        k = 3
        eig = smallest_eigenpairs(as_linop(L), k, deflate=ones)
        w = np.linalg.eigvalsh(L.toarray())
        assert np.allclose(eig.values, w[1 : k + 1], atol=1e-8)

    def test_iterative_path_matches_dense(self):
        L = random_laplacian(36, density=0.25)
        ones = np.full((36, 1), 1 / np.sqrt(36))
        dense = smallest_eigenpairs(as_linop(L), 3, deflate=ones)
        iterative = smallest_eigenpairs(as_linop(L), 3, deflate=ones, dense_cutoff=0)
        assert np.allclose(dense.values, iterative.values, atol=1e-7)
        for j in range(3):
            a, b = dense.vectors[:, j], iterative.vectors[:, j]
            assert min(np.linalg.norm(a - b), np.linalg.norm(a + b)) < 1e-5

    def test_deflated_vectors_mean_zero(self):
        L = random_laplacian(20)
        ones = np.full((20, 1), 1 / np.sqrt(20))
        eig = smallest_eigenpairs(as_linop(L), 2, deflate=ones)
        assert np.abs(eig.vectors.mean(axis=0)).max() < 1e-10

    def test_too_many_requested(self):
        L = random_laplacian(5)
        with pytest.raises(ValueError):
            smallest_eigenpairs(as_linop(L), 5, deflate=np.full((5, 1), 1 / np.sqrt(5)))

    def test_nonconvergence_reports_residuals(self):
        from spectralign.linalg import EigenSolveError

        L = random_laplacian(30, density=0.2)
        ones = np.full((30, 1), 1 / np.sqrt(30))
        with pytest.raises(EigenSolveError) as err:
            smallest_eigenpairs(
                as_linop(L), 3, deflate=ones, dense_cutoff=0, max_iter=1, tol=1e-14
            )
        assert err.value.residuals is not None


class TestStiefelProject:
    def test_idempotent(self):
        X = stiefel_project(rng.standard_normal((7, 3)))
        assert np.allclose(stiefel_project(X), X, atol=1e-10)

    def test_diag_scaling(self):
        X = np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
        assert np.allclose(stiefel_project(X), [[1, 0], [0, 1], [0, 0]])

    def test_nearest_monte_carlo(self):
        X = rng.standard_normal((6, 2))
        Xp = stiefel_project(X)
        d0 = np.linalg.norm(Xp - X)
        for _ in range(100):
            batch = rng.standard_normal((100, 6, 2))
            Q, R = np.linalg.qr(batch)
            dists = np.linalg.norm(Q - X[None], axis=(1, 2))
            assert d0 <= dists.min() + 1e-12

    def test_rank_deficient_raises(self):
        X = np.zeros((5, 2))
        X[:, 0] = rng.standard_normal(5)
        with pytest.raises(RankDeficiencyError):
            stiefel_project(X)

    def test_differential_matches_finite_difference(self):
        for _ in range(5):
            X = stiefel_project(rng.standard_normal((8, 3)))
            T = rng.standard_normal((8, 3))
            h = 1e-6
            fd = (stiefel_project(X + h * T) - stiefel_project(X - h * T)) / (2 * h)
            cf = stiefel_project_differential(X, T)
            assert np.abs(fd - cf).max() < 1e-4


class TestProjectOntoCone:
    def test_fixed_point(self):
        X1 = random_stiefel(6, 2, rng)
        S = np.array([[2.0, 0.3], [0.3, 1.5]])
        B = X1 @ S  # X1^T B = S is SPD
        assert np.allclose(project_onto_cone(X1, B), X1, atol=1e-10)

    def test_identity_product(self):
        X1 = random_stiefel(5, 2, rng)
        Xp = project_onto_cone(X1, X1)
        assert np.allclose(Xp, X1, atol=1e-10)
        assert np.allclose(Xp.T @ X1, np.eye(2), atol=1e-10)

    def test_result_in_feasible_cone(self):
        for _ in range(10):
            X1 = rng.standard_normal((6, 2))
            B = rng.standard_normal((6, 2))
            Xp = project_onto_cone(X1, B)
            M = Xp.T @ B
            assert np.linalg.norm(Xp.T @ Xp - np.eye(2)) < 1e-10
            assert np.linalg.norm(M - M.T) < 1e-10
            assert np.linalg.eigvalsh(0.5 * (M + M.T)).min() >= -1e-10

    def test_monte_carlo_oracle(self):
        X1 = rng.standard_normal((5, 2))
        B = rng.standard_normal((5, 2))
        Xp = project_onto_cone(X1, B)

        def align_obj(Xs):
            s = np.linalg.svd(X1.T @ Xs, compute_uv=False)
            return np.sum(Xs**2) + np.sum(X1**2) - 2 * s.sum()

        best = np.inf
        for _ in range(100):
            batch = rng.standard_normal((1000, 5, 2))
            Q, _ = np.linalg.qr(batch)
            for Xs in Q:
                U, _, Vt = np.linalg.svd(Xs.T @ B)
                Xm = Xs @ (U @ Vt)  # representative with X^T B symmetric PSD
                best = min(best, align_obj(Xm))
        assert align_obj(Xp) <= best + 1e-3

    def test_degenerate_raises(self):
        X1 = np.zeros((5, 2))
        X1[:, 0] = 1.0
        with pytest.raises(RankDeficiencyError):
            project_onto_cone(X1, rng.standard_normal((5, 2)))
        X1 = random_stiefel(5, 2, rng)
        B = np.zeros((5, 2))
        B[:, 0] = X1[:, 0]
        with pytest.raises(RankDeficiencyError):
            project_onto_cone(X1, B)


class TestProjectedShiftedPinv:
    def test_reduces_to_plain_cg(self):
        A = random_laplacian(8).toarray() + 0.7 * np.eye(8)
        b = rng.standard_normal(8)
        x1 = projected_shifted_pinv_apply(as_linop(A), None, 0.0, b, tol=1e-12)
        x2 = cg_solve(A, b, tol=1e-12).x
        assert np.allclose(x1, x2, atol=1e-9)

    def test_orthogonality_contract(self):
        L = random_laplacian(10)
        X = random_stiefel(10, 2, rng)
        ones = np.full((10, 1), 1 / np.sqrt(10))
        o = projected_shifted_pinv_apply(
            as_linop(L), X, 0.0, rng.standard_normal(10), deflate=ones
        )
        assert np.abs(X.T @ o).max() < 1e-10

    def test_matches_dense_pinv_oracle(self):
        L = random_laplacian(8)
        X = random_stiefel(8, 2, rng)
        ones = np.full((8, 1), 1 / np.sqrt(8))
        rhs = rng.standard_normal(8)
        o = projected_shifted_pinv_apply(
            as_linop(L), X, 0.0, rhs, tol=1e-13, deflate=ones
        )
        # dense route: project against X and the ones direction, pseudo-solve
        Q, _ = np.linalg.qr(np.hstack([X, ones]))
        P = np.eye(8) - Q @ Q.T
        M = P @ L.toarray() @ P
        expected = np.linalg.pinv(M) @ (P @ rhs)
        assert np.allclose(o, expected, atol=1e-8)

    def test_indefinite_shift_raises(self):
        L = random_laplacian(9)
        X = random_stiefel(9, 2, rng)
        w = np.linalg.eigvalsh(L.toarray())
        with pytest.raises(IndefiniteOperatorError):
            projected_shifted_pinv_apply(
                as_linop(L), X, w[-1] + 1.0, rng.standard_normal(9)
            )


class TestSmallDense:
    def test_sqrt_identity(self):
        H, Hi = sqrt_and_invsqrt(np.eye(3))
        assert np.allclose(H, np.eye(3)) and np.allclose(Hi, np.eye(3))

    def test_eigenvalues_closed_form(self):
        C = np.array([[1.75, -0.25], [-0.25, 1.75]])
        w, _ = small_sym_eig(C)
        assert np.allclose(w, [1.5, 2.0])

    def test_sqrt_reconstruction(self):
        C = np.array([[1.75, -0.25], [-0.25, 1.75]])
        H, Hi = sqrt_and_invsqrt(C)
        assert np.linalg.norm(H @ H - C) < 1e-12
        assert np.linalg.norm(H @ Hi - np.eye(2)) < 1e-12

    def test_svd_reconstruction(self):
        M = rng.standard_normal((4, 4))
        U, s, Vt = small_svd(M)
        assert np.linalg.norm(U @ np.diag(s) @ Vt - M) < 1e-12

    def test_non_spd_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            sqrt_and_invsqrt(np.diag([1.0, -1.0]))


class TestOperators:
    def test_symmetry_probe(self):
        L = random_laplacian(12)
        op = as_linop(L)
        for _ in range(10):
            u, v = rng.standard_normal(12), rng.standard_normal(12)
            assert abs(u @ op(v) - op(u) @ v) <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)

    def test_centered_operator(self):
        L = random_laplacian(9)
        op = centered_operator(L)
        v = rng.standard_normal(9)
        out = op(v)
        assert abs(out.mean()) < 1e-12
        assert np.allclose(out, (v - v.mean()) @ L.toarray() - ((v - v.mean()) @ L.toarray()).mean())

    def test_to_dense_matches(self):
        L = random_laplacian(7)
        assert np.allclose(as_linop(L).to_dense(), L.toarray())
