"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest

import spectralign as sa
from spectralign import problem as pb
from spectralign import ssm


def random_connected_graph(rng, n, density=0.55):
    """Random weighted undirected connected graph (rejection sampled)."""
    while True:
        A = np.triu(rng.random((n, n)) < density, 1) * rng.random((n, n))
        A = A + A.T
        g = sa.Graph(A)
        if g.is_connected:
            return g


def random_problem(rng, M=8, k=2, m=2, density=0.55):
    """Random assembled SSL instance (resampled until C is SPD)."""
    while True:
        g = random_connected_graph(rng, M, density)
        idx = rng.choice(M, size=m, replace=False)
        vals = np.array(
            list(range(k)) + list(rng.integers(0, k, size=max(0, m - k)))
        )[:m]
        labels = sa.LabelSet(idx, vals[np.argsort(np.argsort(idx))], k)
        try:
            return g, labels, sa.assemble(g, labels)
        except pb.LabelBudgetError:
            continue


def feasible_batch(rng, n, k, count):
    """Random mean-zero points with orthonormal columns, batched (count, n, k)."""
    G = rng.standard_normal((count, n, k))
    G -= G.mean(axis=1, keepdims=True)
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.where(np.diagonal(R, axis1=1, axis2=2) == 0, 1.0,
                                np.diagonal(R, axis1=1, axis2=2)))[:, None, :]


def batch_objective(prob, Xs):
    """Vectorized F over a batch of feasible points (dense oracle route)."""
    Ld = prob.quad.A.to_dense() if hasattr(prob.quad.A, "to_dense") else np.asarray(prob.quad.A)
    BC = prob.B @ prob.C_half
    return 0.5 * np.einsum("bik,ij,bjl,kl->b", Xs, Ld, Xs, prob.C) - np.einsum(
        "bik,ik->b", Xs, BC
    )


def brute_force_min(prob, rng, samples=100_000, polish_top=20, tol=1e-10):
    """Global-search oracle: sample feasible points, polish the best few."""
    Xs = feasible_batch(rng, prob.n, prob.k, samples)
    F = batch_objective(prob, Xs)
    best_F, best_X = np.inf, None
    ones = prob.ones_direction()
    for i in np.argsort(F)[:polish_top]:
        res = ssm.pgd_armijo(prob.quad, Xs[i], foc_tol=tol, max_iter=3000, deflate=ones)
        f = prob.objective(res.X)
        if f < best_F:
            best_F, best_X = f, res.X
    return best_F, best_X


@pytest.fixture(scope="session")
def barbell5():
    return sa.gen_barbell(5)


@pytest.fixture(scope="session")
def ring400():
    """Small ring-of-Gaussians KNN instance shared across tests."""
    feats, labels = sa.gen_gaussian_ring(n_per_cluster=50, sigma=0.17, seed=3)
    graph = sa.build_knn_graph(feats, k=10)
    return feats, labels, graph
