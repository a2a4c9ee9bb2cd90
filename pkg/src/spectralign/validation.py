"""Input validation shared by the estimator layer."""

import numpy as np
import scipy.sparse as sp
from sklearn.utils import check_array

from .graphs import Graph, LabelSet, build_knn_graph


def as_graph(X, knn_k=10):
    """Coerce estimator input into a Graph.

    Accepts a Graph, a (sparse or dense) symmetric adjacency matrix, or a
    feature matrix (rows are points) from which a KNN graph is built.
    """
    if isinstance(X, Graph):
        return X
    if sp.issparse(X):
        return Graph(X)
    X = check_array(X, accept_sparse=False, dtype=np.float64)
    if X.shape[0] == X.shape[1] and np.allclose(X, X.T) and np.all(np.diag(X) == 0):
        return Graph(X)
    return build_knn_graph(X, k=knn_k)


def check_semi_supervised_targets(y, n_vertices):
    """Split a target vector with -1 marking unlabeled entries.

    Returns
    -------
    (labels, classes)
        ``labels`` is a LabelSet over encoded class ids 0..k-1; ``classes``
        maps encoded ids back to the original class values.
    """
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_vertices:
        raise ValueError(
            "y must be 1-D with one entry per vertex (%d), got shape %s"
            % (n_vertices, y.shape)
        )
    labeled_idx = np.flatnonzero(y != -1)
    if labeled_idx.size == 0:
        raise ValueError("y contains no labeled entries (all -1)")
    classes = np.unique(y[labeled_idx])
    encoded = np.searchsorted(classes, y[labeled_idx])
    if classes.size < 2:
        raise ValueError("need at least 2 distinct classes among the labels")
    return LabelSet(labeled_idx, encoded, classes.size), classes
