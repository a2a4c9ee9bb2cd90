"""Transductive graph SSL estimators with the scikit-learn API.

All estimators accept either raw features (a KNN graph is built), a
symmetric adjacency matrix, or a prebuilt :class:`~spectralign.graphs.Graph`
as ``X``, and a target vector ``y`` with -1 marking unlabeled vertices (the
``sklearn.semi_supervised`` convention). They are transductive: ``fit``
computes predictions for every vertex and ``predict`` returns them.
"""

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import align, problem, refine, ssm
from .validation import as_graph, check_semi_supervised_targets


class _GraphSSL(BaseEstimator):
    """Shared fit plumbing; subclasses implement ``_solve``."""

    def fit(self, X, y):
        graph = as_graph(X, knn_k=getattr(self, "knn_k", 10))
        labels, classes = check_semi_supervised_targets(y, graph.n_vertices)
        self.graph_ = graph
        self.labels_ = labels
        self.classes_ = classes
        self.prediction_ = self._solve(graph, labels)
        return self

    def _solve(self, graph, labels):
        raise NotImplementedError

    def predict(self, X=None):
        """Predicted class values for every vertex of the fitted graph."""
        if not hasattr(self, "prediction_"):
            raise NotFittedError("call fit before predict")
        return self.classes_[self.prediction_.labels]

    def fit_predict(self, X, y):
        return self.fit(X, y).predict()

    def transform(self, X=None):
        """Per-vertex class score matrix from the fitted solve."""
        if not hasattr(self, "prediction_"):
            raise NotFittedError("call fit before transform")
        return self.prediction_.scores


class LaplaceLearning(_GraphSSL):
    """Harmonic label extension (label propagation)."""

    def __init__(self, knn_k=10, tol=1e-10, precond="jacobi"):
        self.knn_k = knn_k
        self.tol = tol
        self.precond = precond

    def _solve(self, graph, labels):
        return problem.laplace_learning(
            graph, labels, tol=self.tol, precond=self.precond
        )


class EigenmapRegression(_GraphSSL):
    """Unconstrained least squares on Laplacian eigenvector features (LE-SSL).

    n_components defaults to the number of classes.
    """

    def __init__(self, knn_k=10, n_components=None):
        self.knn_k = knn_k
        self.n_components = n_components

    def _solve(self, graph, labels):
        prob = problem.assemble(graph, labels)
        k = self.n_components or labels.num_classes
        X_eig = align.eigenmap_embed(graph, k)
        return align.le_ssl_baseline(prob, X_eig)


class ProcrustesSSL(_GraphSSL):
    """Spectral embedding aligned to the labels by an orthogonal rotation."""

    def __init__(self, knn_k=10):
        self.knn_k = knn_k

    def _solve(self, graph, labels):
        prob = problem.assemble(graph, labels)
        self.problem_ = prob
        aligned, pred = align.approx_solve(prob)
        self.aligned_ = aligned
        return pred


class SSMClassifier(_GraphSSL):
    """Full pipeline: Procrustes init, subspace refinement, optional KL cuts.

    Parameters
    ----------
    refine_cut : bool
        Run Kernighan-Lin refinement on the decoded labels.
    """

    def __init__(
        self,
        knn_k=10,
        foc_tol=1e-6,
        max_outer=50,
        safeguard_shifts=False,
        refine_cut=False,
        kl_max_sweeps=10,
        seed=0,
    ):
        self.knn_k = knn_k
        self.foc_tol = foc_tol
        self.max_outer = max_outer
        self.safeguard_shifts = safeguard_shifts
        self.refine_cut = refine_cut
        self.kl_max_sweeps = kl_max_sweeps
        self.seed = seed

    def _solve(self, graph, labels):
        prob = problem.assemble(graph, labels)
        self.problem_ = prob
        cfg = ssm.SsmConfig(
            foc_tol=self.foc_tol,
            max_outer=self.max_outer,
            safeguard_shifts=self.safeguard_shifts,
        )
        X_scaled, state = ssm.ssm_solve(prob, config=cfg)
        self.state_ = state
        pred = problem.decode(prob, X_scaled)
        if self.refine_cut:
            pred = refine.kl_refine(
                graph, pred, labels, max_sweeps=self.kl_max_sweeps, seed=self.seed
            )
        return pred
