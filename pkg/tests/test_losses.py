import warnings

import numpy as np
import pytest

from tzsl.embedding_store import SemanticTable
from tzsl.errors import ArgumentError
from tzsl.losses import (DistanceFrame, EmptyTripletBatch, LossSpec, LossWeights, TripletBatch,
                         assign_triplets, confidence_weight, histogram, loss_and_grad, loss_f2s,
                         loss_hubness, loss_s2f, loss_transductive, loss_triplet, loss_unbias,
                         pseudo_label, select_negative, select_positive_gzsl, select_positive_zsl,
                         skewness_loss_raw, sq_dist_matrix)
from tzsl.projection import ProjectionNet, init_net

import oracles


def identity_f2s(dim):
    """ReLU net that is the identity on the nonnegative orthant."""
    eye = np.eye(dim)
    return ProjectionNet("F2S", "relu", eye, np.zeros(dim), eye, np.zeros(dim))


def point_table(points, seen):
    k = len(points)
    return SemanticTable(tuple("ABCDEFGH"[:k]), tuple("abcdefgh"[:k]),
                         np.array(points, dtype=float), seen)


def test_sq_dist_matrix_matches_oracle():
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    np.testing.assert_allclose(sq_dist_matrix(A, B), oracles.sq_dist_matrix(A, B), rtol=1e-12)


@pytest.mark.parametrize("direction", ["S2F", "F2S"])
def test_distance_frame_matches_oracle(direction, small_problem):
    _, table, feats = small_problem
    net = init_net(direction, (5, 7, 6) if direction == "S2F" else (6, 7, 5), seed=1)
    D = DistanceFrame(net, feats, table).D
    for i, x in enumerate(feats):
        np.testing.assert_allclose(D[i], oracles.distances(x, table, net), rtol=1e-12)


class TestSupervised:
    def test_s2f_value(self, small_problem):
        net, table, feats = small_problem
        labels = ["k0", "k1", "k2", "k0", "k1", "k2", "k0", "k0"]
        idx = [table.index_of(c) for c in labels]
        expect = np.mean([oracles.sq_dist(x, oracles.forward(net, table.vectors[k]))
                          for x, k in zip(feats, idx)])
        assert loss_s2f(feats, labels, table, net) == pytest.approx(expect, rel=1e-12)
        lam = 0.01
        assert loss_s2f(feats, labels, table, net, lam) == pytest.approx(
            expect + lam * (np.sum(net.w1 ** 2) + np.sum(net.w2 ** 2)), rel=1e-12)

    def test_f2s_value(self, small_problem):
        _, table, feats = small_problem
        net = init_net("F2S", (6, 7, 5), seed=2)
        labels = ["k2"] * 8
        expect = np.mean([oracles.sq_dist(oracles.forward(net, x), table.vectors[2]) for x in feats])
        assert loss_f2s(feats, labels, table, net) == pytest.approx(expect, rel=1e-12)

    def test_perfect_fit_is_zero(self):
        net = identity_f2s(2)
        table = point_table([[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]], [True, True, False])
        assert loss_f2s(np.array([[0.5, 0.5], [1.0, 0.0]]), ["A", "B"], table, net) == 0.0

    def test_rejects_unseen_label(self, small_problem):
        net, table, feats = small_problem
        with pytest.raises(ArgumentError):
            loss_s2f(feats[:1], ["k4"], table, net)

    def test_rejects_wrong_direction(self, small_problem):
        net, table, feats = small_problem
        with pytest.raises(ArgumentError):
            loss_f2s(feats[:1], ["k0"], table, net)


class TestSelection:
    def test_matches_oracle(self, small_problem):
        net, table, feats = small_problem
        for x in feats:
            d = oracles.distances(x, table, net)
            unseen = list(table.unseen_indices)
            seen = list(table.seen_indices)
            assert select_positive_zsl(x, table, net) == table.class_ids[oracles.argmin(d, unseen)]
            assert select_negative(x, table, net) == table.class_ids[oracles.argmin(d, seen)]
            best = oracles.argmin(d, range(table.num_classes))
            expect = None if table.seen_mask[best] else table.class_ids[best]
            assert select_positive_gzsl(x, table, net) == expect
            assert pseudo_label(x, table, net) == table.class_ids[best]
            assert pseudo_label(x, table, net, "unseen") == table.class_ids[oracles.argmin(d, unseen)]

    def test_ties_go_to_lowest_index(self):
        net = identity_f2s(2)
        table = point_table([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
                            [True, True, False, False])
        x = np.array([0.5, 0.5])
        assert pseudo_label(x, table, net) == "A"
        assert select_negative(x, table, net) == "A"
        assert select_positive_zsl(x, table, net) == "C"
        assert select_positive_gzsl(x, table, net) is None

    def test_gzsl_discards_seen_nearest(self):
        net = identity_f2s(2)
        table = point_table([[1.0, 0.0], [0.0, 1.0]], [True, False])
        feats = np.array([[0.9, 0.0], [0.0, 0.9], [0.8, 0.1]])
        tb = assign_triplets(feats, table, net, "gzsl")
        assert tb.discarded.tolist() == [True, False, True]
        assert tb.discarded_fraction == pytest.approx(2 / 3)
        tb.check(table, "gzsl")
        zsl = assign_triplets(feats, table, net, "zsl")
        assert not zsl.discarded.any() and zsl.positive.tolist() == [1, 1, 1]

    def test_task_requires_both_partitions(self):
        net = identity_f2s(2)
        table = point_table([[1.0, 0.0], [0.0, 1.0]], [True, True])
        with pytest.raises(ArgumentError):
            select_positive_zsl([0.1, 0.1], table, net)


class TestTriplet:
    def setup_method(self):
        # Anchor at the origin; unseen A at distance 1, seen B at distance 1.5.
        self.net = identity_f2s(2)
        self.table = point_table([[1.0, 0.0], [0.0, np.sqrt(1.5)]], [False, True])
        self.anchor = np.zeros((1, 2))

    def tb(self, discarded=False):
        return TripletBatch(self.anchor, np.array([-1 if discarded else 0]), np.array([1]),
                            np.array([discarded]))

    def test_worked_example(self):
        assert loss_triplet(self.tb(), self.table, self.net, 1.0) == pytest.approx(0.5, rel=1e-12)

    def test_inactive_hinge(self):
        assert loss_triplet(self.tb(), self.table, self.net, 0.4) == 0.0

    def test_all_discarded_warns(self):
        with pytest.warns(EmptyTripletBatch):
            assert loss_triplet(self.tb(True), self.table, self.net) == 0.0

    def test_invalid_batches(self):
        bad = TripletBatch(self.anchor, np.array([1]), np.array([1]), np.array([False]))
        with pytest.raises(ArgumentError):
            loss_triplet(bad, self.table, self.net)
        with pytest.raises(ArgumentError):
            self.tb(True).check(self.table, "zsl")
        with pytest.raises(ArgumentError):
            loss_triplet(self.tb(), self.table, self.net, margin=-1)


class TestHubness:
    def test_skewness_example(self):
        h = histogram(list("AAAB"), ("A", "B"))
        assert h.as_dict() == {"A": 3, "B": 1}
        assert skewness_loss_raw(h, list("AAAB")) == pytest.approx(0.5, rel=1e-12)

    def test_skewness_matches_oracle(self):
        rng = np.random.default_rng(0)
        space = tuple("ABCDE")
        for _ in range(20):
            labels = list(rng.choice(list(space), size=rng.integers(1, 30)))
            h = histogram(labels, space)
            assert skewness_loss_raw(h, labels) == pytest.approx(
                oracles.skewness_per_sample(labels, space), rel=1e-12, abs=1e-15)

    def test_uniform_histogram_is_zero(self):
        labels = list("ABCABC")
        assert skewness_loss_raw(histogram(labels, "ABC"), labels) == 0.0

    def test_label_outside_space(self):
        with pytest.raises(ArgumentError):
            histogram(["Z"], ("A", "B"))

    def test_equal_distances(self):
        # Every class is equally near, so all ties go to class 0 and the
        # softmax is uniform: pi = log K.
        net = identity_f2s(2)
        table = point_table([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
                            [True, True, False, False])
        feats = np.array([[0.5, 0.5]] * 6)
        pi = confidence_weight(feats, table, net)
        assert pi == pytest.approx(np.log(4), rel=1e-12)
        raw = oracles.skewness_per_sample(["A"] * 6, "ABCD")
        assert loss_hubness(feats, table, net) == pytest.approx(pi * raw, rel=1e-12)

    def test_confidence_weight_matches_oracle(self, small_problem):
        net, table, feats = small_problem
        D = [oracles.distances(x, table, net) for x in feats]
        yhat = [oracles.argmin(row, range(5)) for row in D]
        assert confidence_weight(feats, table, net) == pytest.approx(
            oracles.confidence_weight(D, yhat), rel=1e-10)
        labels = [table.class_ids[k] for k in yhat]
        raw = oracles.skewness_per_sample(labels, table.class_ids)
        assert loss_hubness(feats, table, net) == pytest.approx(
            oracles.confidence_weight(D, yhat) * raw, rel=1e-10, abs=1e-14)

    def test_unseen_label_space(self, small_problem):
        net, table, feats = small_problem
        D = [[row[k] for k in (3, 4)] for row in (oracles.distances(x, table, net) for x in feats)]
        yhat = [oracles.argmin(row, range(2)) for row in D]
        assert confidence_weight(feats, table, net, "unseen") == pytest.approx(
            oracles.confidence_weight(D, yhat), rel=1e-10)


class TestUnbias:
    def test_matches_oracle(self, small_problem):
        net, table, feats = small_problem
        D = [oracles.distances(x, table, net) for x in feats]
        assert loss_unbias(feats, table, net) == pytest.approx(
            oracles.unbias(D, [3, 4]), rel=1e-10)

    def test_nonnegative_and_stable_at_large_distance(self):
        net = identity_f2s(2)
        table = point_table([[0.0, 0.0], [200.0, 0.0]], [True, False])
        value = loss_unbias(np.array([[1.0, 0.0]]), table, net)
        # D = [1, 199^2]; the loss is about 199^2 - 1 and must not overflow.
        assert value == pytest.approx(199.0 ** 2 - 1.0, rel=1e-12)
        assert loss_unbias(np.array([[199.0, 0.0]]), table, net) >= 0


def test_transductive_combination(small_problem):
    net, table, feats = small_problem
    w = LossWeights(alpha1=0.3, alpha2=0.2, alpha3=0.1)
    tb = assign_triplets(feats, table, net, "zsl")
    expect = (0.3 * loss_triplet(tb, table, net, w.margin) + 0.2 * loss_hubness(feats, table, net)
              + 0.1 * loss_unbias(feats, table, net))
    assert loss_transductive(feats, table, net, w) == pytest.approx(expect, rel=1e-12)
    zero = LossWeights(0.0, 0.0, 0.0)
    assert loss_transductive(feats, table, net, zero) == 0.0


def _specs(table, feats, net):
    tb = assign_triplets(feats, table, net, "zsl")
    frozen = DistanceFrame(net, feats, table).D.argmin(axis=1)
    seen_labels = [table.seen_ids[i % table.num_seen] for i in range(len(feats))]
    kind = net.direction.lower()
    return {
        kind: LossSpec(kind, table, feats, labels=seen_labels, lam=0.01),
        "triplet": LossSpec("triplet", table, triplets=tb, margin=5.0),
        "hubness": LossSpec("hubness", table, feats, frozen_labels=frozen),
        "hubness-unseen": LossSpec("hubness", table, feats, label_space="unseen",
                                   frozen_labels=table.unseen_indices[
                                       DistanceFrame(net, feats, table).D[:, 3:].argmin(axis=1)]),
        "unbias": LossSpec("unbias", table, feats),
        "transductive": LossSpec("transductive", table, feats, triplets=tb,
                                 weights=LossWeights(0.4, 0.3, 0.2, margin=5.0),
                                 frozen_labels=frozen),
    }


@pytest.mark.parametrize("direction", ["S2F", "F2S"])
def test_gradients_match_finite_differences(direction, small_problem):
    _, table, feats = small_problem
    net = init_net(direction, (5, 7, 6) if direction == "S2F" else (6, 7, 5), seed=5)
    for name, spec in _specs(table, feats, net).items():
        _, analytic = loss_and_grad(net, spec)
        numeric = oracles.central_difference(lambda n: loss_and_grad(n, spec)[0], net)
        err = oracles.max_relative_error(analytic, numeric)
        assert err < 1e-5, (name, err)


def test_loss_and_grad_rejects_unknown_kind(small_problem):
    net, table, feats = small_problem
    with pytest.raises(ArgumentError):
        loss_and_grad(net, LossSpec("contrastive", table, feats))


def test_empty_triplet_batch_in_transductive_is_silent():
    net = identity_f2s(2)
    table = point_table([[1.0, 0.0], [0.0, 1.0]], [True, False])
    feats = np.array([[0.9, 0.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        value = loss_transductive(feats, table, net, LossWeights(1.0, 0.0, 0.0), mode="gzsl")
    assert value == 0.0



class TestWorkedExamples:
    def test_histogram_with_empty_class(self):
        h = histogram(list("AAAB"), "ABC")
        assert h.counts.tolist() == [3, 1, 0] and h.batch_size == 4

    def test_single_hub_is_positive(self):
        labels = ["A"] * 7
        assert skewness_loss_raw(histogram(labels, "ABC"), labels) > 0

    def test_confident_limit(self):
        net = identity_f2s(2)
        x = np.array([[1.0, 0.0]])
        near = point_table([[1.0, 0.0], [0.0, 3.0]], [True, False])
        assert confidence_weight(x, near, net) == pytest.approx(np.log1p(np.exp(-10.0)), rel=1e-12)
        far = point_table([[1.0, 0.0], [0.0, 30.0]], [True, False])
        assert 0.0 <= confidence_weight(x, far, net) < 1e-12

    def test_equal_distance_hubness_with_pinned_labels(self):
        # Live pseudo-labels of an equidistant batch all tie to A, so the
        # [A, A, A, B] assignment is pinned explicitly: 0.5 * ln 2.
        net = identity_f2s(2)
        table = point_table([[1.0, 0.0], [0.0, 1.0]], [True, False])
        feats = np.full((4, 2), 0.5)
        spec = LossSpec("hubness", table, feats, frozen_labels=np.array([0, 0, 0, 1]))
        assert loss_and_grad(net, spec)[0] == pytest.approx(0.5 * np.log(2), rel=1e-12)

    def test_unbias_equal_distances(self):
        eye = np.eye(4)
        net = ProjectionNet("F2S", "relu", eye, np.zeros(4), eye, np.zeros(4))
        table = SemanticTable(tuple("ABCD"), tuple("abcd"), eye, [True, True, True, False])
        assert loss_unbias(np.full((3, 4), 0.25), table, net) == pytest.approx(np.log(4), rel=1e-12)

    def test_unbias_mass_on_unseen(self):
        net = identity_f2s(2)
        table = point_table([[0.0, 40.0], [1.0, 0.0]], [True, False])
        assert 0.0 <= loss_unbias(np.array([[1.0, 0.0]]), table, net) < 1e-12
