import numpy as np
import pytest

import spectralign as sa
from spectralign import refine

rng = np.random.default_rng(17)


def random_graph(n, density=0.6):
    A = np.triu(rng.random((n, n)) < density, 1) * rng.random((n, n))
    A = A + A.T
    return sa.Graph(A)


def three_cliques(eps=0.1):
    A = np.zeros((12, 12))
    for c in range(3):
        A[4 * c : 4 * c + 4, 4 * c : 4 * c + 4] = 1.0
    np.fill_diagonal(A, 0.0)
    A[3, 4] = A[4, 3] = eps
    A[7, 8] = A[8, 7] = eps
    A[0, 11] = A[11, 0] = eps
    return sa.Graph(A)


def exhaustive_best_cut(graph, size_profile):
    """Brute-force minimum cut over labelings with the given class sizes."""
    import itertools

    n = graph.n_vertices
    best = np.inf
    k = len(size_profile)
    for assign in itertools.product(range(k), repeat=n):
        counts = np.bincount(assign, minlength=k)
        if not np.array_equal(counts, size_profile):
            continue
        best = min(best, refine.cut_cost(graph, np.asarray(assign)))
    return best


class TestGains:
    def test_isolated_vertex(self):
        A = np.zeros((3, 3))
        A[0, 1] = A[1, 0] = 1.0
        g = sa.Graph(A)
        assert refine.vertex_gain(g, [0, 0, 1], 2) == 0.0

    def test_all_neighbors_other_class(self):
        A = np.zeros((4, 4))
        A[0, 1:] = A[1:, 0] = 1.0
        g = sa.Graph(A)
        labels = [0, 1, 1, 1]
        assert refine.vertex_gain(g, labels, 0) == pytest.approx(3.0)

    def test_reversed_sign_convention_flag(self):
        A = np.zeros((4, 4))
        A[0, 1:] = A[1:, 0] = 1.0
        g = sa.Graph(A)
        labels = [0, 1, 1, 1]
        assert refine.vertex_gain(g, labels, 0, sign_convention="internal_minus_external") == -3.0
        with pytest.raises(ValueError):
            refine.vertex_gain(g, labels, 0, sign_convention="bogus")

    def test_triangle_enumeration(self):
        A = 1.0 - np.eye(3)
        g = sa.Graph(A)
        labels = [0, 1, 1]
        # vertex 0: both neighbors external -> +2; vertices 1, 2: 1 ext, 1 int -> 0
        assert refine.vertex_gain(g, labels, 0) == pytest.approx(2.0)
        assert refine.vertex_gain(g, labels, 1) == pytest.approx(0.0)
        assert refine.vertex_gain(g, labels, 2) == pytest.approx(0.0)

    def test_pair_gain_non_adjacent(self):
        A = np.zeros((4, 4))
        A[0, 1] = A[1, 0] = 1.0
        A[2, 3] = A[3, 2] = 1.0
        g = sa.Graph(A)
        labels = [0, 1, 0, 1]
        expected = refine.vertex_gain(g, labels, 0) + refine.vertex_gain(g, labels, 3)
        assert refine.pair_gain(g, labels, 0, 3) == pytest.approx(expected)

    def test_pair_gain_adjacent_arithmetic(self):
        # unit edge between v, w; each has gain 1 -> pair gain 1 + 1 - 2 = 0
        A = np.zeros((2, 2))
        A[0, 1] = A[1, 0] = 1.0
        g = sa.Graph(A)
        labels = [0, 1]
        assert refine.pair_gain(g, labels, 0, 1) == pytest.approx(0.0)

    def test_same_class_pair_rejected(self):
        g = random_graph(5)
        with pytest.raises(ValueError):
            refine.pair_gain(g, [0, 0, 1, 1, 1], 0, 1)

    def test_exchange_equals_cut_delta(self):
        # 1e3 random (graph, labeling, pair) triples, exact cut bookkeeping
        checked = 0
        while checked < 1000:
            g = random_graph(8)
            labels = rng.integers(0, 3, 8)
            pairs = [
                (v, w)
                for v in range(8)
                for w in range(v + 1, 8)
                if labels[v] != labels[w]
            ]
            if not pairs:
                continue
            v, w = pairs[rng.integers(len(pairs))]
            gain = refine.pair_gain(g, labels, v, w)
            swapped = labels.copy()
            swapped[v], swapped[w] = labels[w], labels[v]
            delta = refine.cut_cost(g, labels) - refine.cut_cost(g, swapped)
            assert gain == pytest.approx(delta, abs=1e-10)
            checked += 1


class TestKlPass:
    def test_optimal_bipartition_unchanged(self, barbell5):
        truth = np.repeat([0, 1], 5)
        new, imp = refine.kl_pass(barbell5, truth, 0, 1)
        assert imp == 0.0
        assert np.array_equal(new, truth)

    def test_swapped_pair_corrected(self):
        g = sa.gen_barbell(3)
        truth = np.repeat([0, 1], 3)
        wrong = truth.copy()
        wrong[1], wrong[4] = 1, 0  # size-preserving double misassignment
        new, imp = refine.kl_pass(g, wrong, 0, 1)
        assert np.array_equal(new, truth)
        assert imp == pytest.approx(
            refine.cut_cost(g, wrong) - refine.cut_cost(g, new)
        )

    def test_reaches_exchange_optimal_cut(self):
        # exchanges preserve class sizes; compare against exhaustive search
        # restricted to the reachable size profile
        g = sa.gen_barbell(3)
        wrong = np.array([0, 1, 0, 1, 1, 1])  # sizes (2, 4)
        labels = wrong.copy()
        while True:
            labels, imp = refine.kl_pass(g, labels, 0, 1)
            if imp <= 0:
                break
        assert refine.cut_cost(g, labels) == pytest.approx(
            exhaustive_best_cut(g, np.array([2, 4]))
        )

    def test_prefix_gain_equals_cut_drop(self):
        for _ in range(20):
            g = random_graph(9)
            labels = rng.integers(0, 2, 9)
            if len(set(labels.tolist())) < 2:
                continue
            new, imp = refine.kl_pass(g, labels, 0, 1)
            drop = refine.cut_cost(g, labels) - refine.cut_cost(g, new)
            assert imp == pytest.approx(drop, abs=1e-9)

    def test_empty_class_noop(self):
        g = random_graph(6)
        labels = np.zeros(6, dtype=int)
        new, imp = refine.kl_pass(g, labels, 0, 1)
        assert imp == 0.0 and np.array_equal(new, labels)

    def test_frozen_vertices_never_move(self):
        g = sa.gen_barbell(3)
        wrong = np.array([1, 0, 0, 1, 1, 0])
        frozen = [0, 5]
        new, _ = refine.kl_pass(g, wrong, 0, 1, frozen=frozen)
        assert new[0] == wrong[0] and new[5] == wrong[5]


class TestKlRefine:
    def test_two_class_reduces_to_classic(self):
        g = random_graph(10)
        labels = rng.integers(0, 2, 10)
        pred = refine.kl_refine(g, labels, max_sweeps=10, seed=4)
        manual = labels.copy()
        while True:
            manual, imp = refine.kl_pass(g, manual, 0, 1)
            if imp <= 0:
                break
        assert np.array_equal(pred.labels, manual)

    def test_three_clique_recovery(self):
        g = three_cliques()
        truth = np.repeat([0, 1, 2], 4)
        bad = truth.copy()
        bad[0], bad[4] = 1, 0  # size-preserving cross-clique mix-up
        pred = refine.kl_refine(g, bad, max_sweeps=10, seed=0)
        assert np.array_equal(pred.labels, truth)

    def test_idempotent_at_local_optimum(self):
        g = three_cliques()
        first = refine.kl_refine(g, rng.integers(0, 3, 12), max_sweeps=10, seed=2)
        second = refine.kl_refine(g, first.labels, max_sweeps=10, seed=2)
        assert np.array_equal(first.labels, second.labels)

    def test_deterministic(self):
        g = random_graph(12)
        labels = rng.integers(0, 3, 12)
        a = refine.kl_refine(g, labels, seed=9)
        b = refine.kl_refine(g, labels, seed=9)
        assert np.array_equal(a.labels, b.labels)

    def test_cut_monotone_and_improved(self):
        for _ in range(10):
            g = random_graph(12)
            labels = rng.integers(0, 3, 12)
            pred = refine.kl_refine(g, labels, max_sweeps=10, seed=1)
            assert refine.cut_cost(g, pred.labels) <= refine.cut_cost(g, labels) + 1e-9

    def test_supervised_immutable(self):
        g = three_cliques()
        truth = np.repeat([0, 1, 2], 4)
        supervised = sa.LabelSet([0, 4, 8], [0, 1, 2], 3)
        bad = rng.integers(0, 3, 12)
        pred = refine.kl_refine(g, bad, labels=supervised, seed=0)
        assert np.array_equal(pred.labels[[0, 4, 8]], [0, 1, 2])

    def test_prediction_scores_consistent(self):
        g = random_graph(8)
        pred = refine.kl_refine(g, rng.integers(0, 2, 8), seed=0)
        assert np.array_equal(np.argmax(pred.scores, axis=1), pred.labels)

    def test_size_mismatch_rejected(self):
        g = random_graph(6)
        with pytest.raises(ValueError):
            refine.kl_refine(g, np.zeros(4, dtype=int))
