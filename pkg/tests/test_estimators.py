import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import spectralign as sa
from spectralign.estimators import (
    EigenmapRegression,
    LaplaceLearning,
    ProcrustesSSL,
    SSMClassifier,
)

rng = np.random.default_rng(8)


def barbell_xy(class_values=(0, 1)):
    g = sa.gen_barbell(5)
    y = np.full(10, -1)
    y[0], y[9] = class_values
    truth = np.repeat(class_values, 5)
    return g, y, truth


ESTIMATORS = [LaplaceLearning, EigenmapRegression, ProcrustesSSL, SSMClassifier]


@pytest.mark.parametrize("cls", ESTIMATORS)
def test_sklearn_params_roundtrip(cls):
    est = cls()
    params = est.get_params()
    est2 = clone(est)
    assert est2.get_params() == params
    est.set_params(knn_k=7)
    assert est.get_params()["knn_k"] == 7


@pytest.mark.parametrize("cls", ESTIMATORS)
def test_fit_predict_barbell(cls):
    g, y, truth = barbell_xy()
    est = cls()
    pred = est.fit_predict(g, y)
    assert pred.shape == (10,)
    assert np.array_equal(est.classes_, [0, 1])
    if cls is not EigenmapRegression:  # LE-SSL is degenerate at 1 label/class
        assert np.array_equal(pred, truth)


def test_noncontiguous_class_values():
    g, y, truth = barbell_xy(class_values=(3, 7))
    pred = SSMClassifier().fit_predict(g, y)
    assert set(np.unique(pred).tolist()) <= {3, 7}
    assert np.array_equal(pred, truth)


def test_accepts_adjacency_and_features():
    g, y, truth = barbell_xy()
    pred_adj = LaplaceLearning().fit_predict(g.adjacency, y)
    pred_graph = LaplaceLearning().fit_predict(g, y)
    assert np.array_equal(pred_adj, pred_graph)

    feats, labels = sa.gen_gaussian_ring(n_per_cluster=25, sigma=0.17, seed=0)
    y2 = np.full(len(labels), -1)
    picks = [np.flatnonzero(labels == c)[:3] for c in (0, 1)]
    for p, c in zip(picks, (0, 1)):
        y2[p] = c
    est = LaplaceLearning(knn_k=8)
    pred = est.fit_predict(feats, y2)
    assert pred.shape == (len(labels),)
    assert est.graph_.n_vertices == len(labels)


def test_refine_cut_flag():
    g, y, truth = barbell_xy()
    est = SSMClassifier(refine_cut=True)
    assert np.array_equal(est.fit_predict(g, y), truth)


def test_transform_returns_scores():
    g, y, _ = barbell_xy()
    est = ProcrustesSSL().fit(g, y)
    scores = est.transform()
    assert scores.shape == (10, 2)
    assert np.array_equal(np.argmax(scores, axis=1), est.prediction_.labels)


def test_not_fitted_errors():
    with pytest.raises(NotFittedError):
        LaplaceLearning().predict()
    with pytest.raises(NotFittedError):
        ProcrustesSSL().transform()


def test_target_validation():
    g, y, _ = barbell_xy()
    with pytest.raises(ValueError):
        LaplaceLearning().fit(g, np.full(10, -1))  # nothing labeled
    with pytest.raises(ValueError):
        LaplaceLearning().fit(g, y[:5])  # wrong length
    y_one = np.full(10, -1)
    y_one[0] = 0
    with pytest.raises(ValueError):
        LaplaceLearning().fit(g, y_one)  # single class
