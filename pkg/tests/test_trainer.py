import csv
import io
from dataclasses import replace

import numpy as np
import pytest

from tzsl.embedding_store import EmbeddingSet, SemanticTable, SyntheticSpec, make_synthetic
from tzsl.errors import ArgumentError, NumericError
from tzsl.evaluation import evaluate
from tzsl.losses import LossWeights
from tzsl.trainer import (PRESETS, TrainConfig, train, train_inductive, train_transductive,
                          unlabeled_pool)

SPEC = SyntheticSpec(num_seen_classes=4, num_unseen_classes=3, feature_dim=10, semantic_dim=6,
                     instances_per_class=20, seed=3)


@pytest.fixture(scope="module")
def problem():
    return make_synthetic(SPEC)


def cfg(**kw):
    base = dict(mode="gzsl", lr=1e-2, labeled_batch=16, unlabeled_batch=24, inductive_epochs=4,
                transductive_epochs=3, hidden_dim=12, seed=1,
                weights=LossWeights(0.4, 0.1, 0.1))
    base.update(kw)
    return TrainConfig(**base)


def with_rows(data, features=None, labels=None):
    return EmbeddingSet(data.instance_ids, data.features if features is None else features,
                        data.labels if labels is None else labels, data.splits)


def test_same_seed_is_bitwise_deterministic(problem):
    data, table = problem
    a = train(data, table, cfg())
    b = train(data, table, cfg())
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    assert a[2].to_csv() == b[2].to_csv()
    c = train(data, table, cfg(seed=2))
    assert not c[1].equals(a[1])


def test_staging_equivalence(problem):
    data, table = problem
    c = cfg()
    w_ind, w_tns, _ = train(data, table, c)
    w1, _ = train_inductive(data, table, c)
    w2, _ = train_transductive(w1, data, table, c)
    assert w1.equals(w_ind) and w2.equals(w_tns)


def test_inductive_never_sees_unseen(problem):
    data, table = problem
    feats = data.features.copy()
    unseen_rows = np.array([s == "unseen-test" for s in data.splits])
    feats[unseen_rows] += 5.0
    vectors = table.vectors.copy()
    vectors[table.unseen_indices] *= -3.0
    table2 = SemanticTable(table.class_ids, table.names, vectors, table.seen_mask)
    a, _ = train_inductive(data, table, cfg())
    b, _ = train_inductive(with_rows(data, feats), table2, cfg())
    assert a.equals(b)


@pytest.mark.parametrize("mode", ["zsl", "gzsl"])
def test_transductive_ignores_test_labels(problem, mode):
    data, table = problem
    c = cfg(mode=mode)
    w_ind, _ = train_inductive(data, table, c)
    hidden = tuple(None if s != "seen-train" else lab for lab, s in zip(data.labels, data.splits))
    a, _ = train_transductive(w_ind, data, table, c)
    b, _ = train_transductive(w_ind, with_rows(data, labels=hidden), table, c)
    assert a.equals(b)


def test_unlabeled_pool(problem):
    data, _ = problem
    assert len(unlabeled_pool(data, "zsl")) == 60
    assert len(unlabeled_pool(data, "gzsl")) == 60 + 4 * 4


def test_zero_lr_keeps_weights(problem):
    data, table = problem
    c = cfg(lr=0.0)
    w_ind, _ = train_inductive(data, table, cfg())
    w_tns, log = train_transductive(w_ind, data, table, c)
    assert w_tns.equals(w_ind) and len(log) == 3


def test_inductive_loss_decreases(problem):
    data, table = problem
    _, log = train_inductive(data, table, cfg(inductive_epochs=15))
    losses = [r.supervised_loss for r in log]
    # Unit-variance clusters in 10 dims leave an irreducible loss near 10.
    assert losses[-1] < losses[0] and losses[-1] < 11.0


def test_log_layout(problem):
    data, table = problem
    _, _, log = train(data, table, cfg())
    assert [r.stage for r in log] == ["inductive"] * 4 + ["transductive"] * 3
    rows = list(csv.DictReader(io.StringIO(log.to_csv())))
    assert set(rows[0]) == {"epoch", "stage", "supervised_loss", "triplet_loss", "hubness_loss",
                            "unbias_loss", "total", "discarded_fraction"}
    for r in log.stage("transductive"):
        assert 0.0 <= r.discarded_fraction <= 1.0


def test_zsl_never_discards(problem):
    data, table = problem
    _, _, log = train(data, table, cfg(mode="zsl"))
    assert all(r.discarded_fraction == 0.0 for r in log.stage("transductive"))


def test_early_stopping_returns_best(problem):
    data, table = problem
    c = cfg(transductive_epochs=30, patience=2, lr=0.05)
    w_ind, _ = train_inductive(data, table, c)
    net, log = train_transductive(w_ind, data, table, c, validation=(data, table))
    assert 1 <= len(log) <= 30
    scores = []
    for n in range(1, len(log) + 1):
        m, _ = train_transductive(w_ind, data, table, replace(c, transductive_epochs=n))
        scores.append(evaluate(data, table, m, "gzsl").hm)
    assert evaluate(data, table, net, "gzsl").hm == pytest.approx(max(scores))
    if len(log) < 30:
        assert len(log) - 1 - int(np.argmax(scores)) == 2


def test_f2s_direction(problem):
    data, table = problem
    w_ind, w_tns, _ = train(data, table, cfg(direction="F2S"))
    assert w_tns.dims == (10, 12, 6) and w_tns.direction == "F2S"


def test_non_finite_loss_raises(problem):
    data, table = problem
    huge = with_rows(data, data.features * 1e200)
    with np.errstate(all="ignore"), pytest.raises(NumericError) as exc:
        train_inductive(huge, table, cfg())
    assert exc.value.epoch == 1


def test_mismatched_init(problem):
    data, table = problem
    w, _ = train_inductive(data, table, cfg())
    with pytest.raises(ArgumentError):
        train_transductive(w, data, table, cfg(hidden_dim=13))


class TestConfig:
    def test_presets(self):
        assert PRESETS["scanobjectnn"]["alpha2"] == 0.2
        c = TrainConfig.from_preset("awa2", mode="gzsl")
        assert (c.weights.alpha1, c.weights.alpha2, c.weights.alpha3) == (0.12, 0.001, 0.01)
        assert c.lr == 1e-4 and c.mode == "gzsl"
        with pytest.raises(ArgumentError):
            TrainConfig.from_preset("imagenet")

    def test_round_trip(self):
        c = cfg(label_space="unseen")
        assert TrainConfig.from_dict(c.to_dict()) == c

    @pytest.mark.parametrize("kw", [{"mode": "fsl"}, {"lr": -1.0}, {"lr": float("nan")},
                                    {"labeled_batch": 0}, {"direction": "S2S"},
                                    {"label_space": "seen"}, {"inductive_epochs": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ArgumentError):
            cfg(**kw)

    def test_unknown_key(self):
        with pytest.raises(ArgumentError):
            TrainConfig.from_dict({"momentum": 0.9})

    def test_negative_weight(self):
        with pytest.raises(ArgumentError):
            LossWeights(alpha1=-0.1)
