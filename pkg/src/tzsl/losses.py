"""Supervised and transductive objectives, with their analytic gradients.

Every objective here is a function of the squared-distance matrix ``D``
between query vectors and class prototypes.  In S2F mode the queries are
the raw features and the prototypes are the projected semantic vectors; in
F2S mode the queries are projected features and the prototypes are the raw
semantic vectors.  Each loss therefore only has to produce ``dL/dD``; the
chain rule through ``D`` and the net is shared.

Argmin selections (positives, negatives, pseudo-labels) and histogram
counts are piecewise constant and are treated as constants when
differentiating.  The hubness gradient thus flows only through the
confidence weight.
"""
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError, NumericError
from .projection import (add_grads, backward, forward_cached, l2_grad, l2_penalty,
                         zero_grads)

LABEL_SPACES = ("all", "unseen")
MODES = ("zsl", "gzsl")
DISCARD = None


class EmptyTripletBatch(UserWarning):
    """Every anchor of a triplet batch was discarded; the loss is 0."""


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 0.4
    alpha2: float = 0.001
    alpha3: float = 0.001
    margin: float = 1.0
    lam: float = 1e-4

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "margin", "lam"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ArgumentError(f"{name} must be a finite nonnegative number, got {value!r}")


@dataclass(frozen=True, eq=False)
class TripletBatch:
    """Anchors with their positive/negative class indices.

    ``positive`` is -1 for discarded anchors.
    """
    anchors: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    discarded: np.ndarray

    @property
    def n_active(self):
        return int((~self.discarded).sum())

    @property
    def discarded_fraction(self):
        return float(self.discarded.mean()) if len(self.discarded) else 0.0

    def check(self, table, mode=None):
        act = ~self.discarded
        if np.any(self.positive[act] == self.negative[act]):
            raise ArgumentError("positive and negative class coincide for an active anchor")
        if np.any(table.seen_mask[self.positive[act]]):
            raise ArgumentError("positive class must be unseen")
        if np.any(~table.seen_mask[self.negative]):
            raise ArgumentError("negative class must be seen")
        if mode == "zsl" and np.any(self.discarded):
            raise ArgumentError("ZSL triplet batches cannot discard anchors")


@dataclass(frozen=True, eq=False)
class PredictionHistogram:
    class_ids: tuple
    counts: np.ndarray

    @property
    def batch_size(self):
        return int(self.counts.sum())

    def as_dict(self):
        return {c: int(n) for c, n in zip(self.class_ids, self.counts)}


# -- distance kernel -----------------------------------------------------

def sq_dist_matrix(features, projected):
    """Squared Euclidean distances between the rows of two matrices."""
    a = np.atleast_2d(np.asarray(features, dtype=np.float64))
    b = np.atleast_2d(np.asarray(projected, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ArgumentError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ikj,ikj->ik", diff, diff)


class DistanceFrame:
    """Squared distances from a batch to every class, plus their backprop."""

    def __init__(self, net, features, table):
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        self.net = net
        self.table = table
        if net.direction == "S2F":
            if net.in_dim != table.semantic_dim or net.out_dim != feats.shape[1]:
                raise ArgumentError(
                    f"S2F net dims {net.dims} do not fit semantic_dim={table.semantic_dim}, "
                    f"feature_dim={feats.shape[1]}")
            self.prototypes, self._cache = forward_cached(net, table.vectors)
            self.queries = feats
        else:
            if net.in_dim != feats.shape[1] or net.out_dim != table.semantic_dim:
                raise ArgumentError(
                    f"F2S net dims {net.dims} do not fit feature_dim={feats.shape[1]}, "
                    f"semantic_dim={table.semantic_dim}")
            self.queries, self._cache = forward_cached(net, feats)
            self.prototypes = table.vectors
        self.D = sq_dist_matrix(self.queries, self.prototypes)

    def backprop(self, G):
        """Parameter gradients given ``dL/dD`` (same shape as ``D``)."""
        Q, P = self.queries, self.prototypes
        if self.net.direction == "S2F":
            grad_out = 2.0 * (G.sum(axis=0)[:, None] * P - G.T @ Q)
        else:
            grad_out = 2.0 * (G.sum(axis=1)[:, None] * Q - G @ P)
        grads = backward(self.net, self._cache, grad_out)
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}", param=name)
        return grads


def label_space_indices(table, label_space):
    if label_space == "all":
        return np.arange(table.num_classes)
    if label_space == "unseen":
        return table.unseen_indices
    raise ArgumentError(f"label_space must be 'all' or 'unseen', got {label_space!r}")


def _logsumexp_neg(D):
    """Rowwise ``log(sum(exp(-D)))`` with max-subtraction."""
    lo = D.min(axis=1, keepdims=True)
    return -lo[:, 0] + np.log(np.exp(-(D - lo)).sum(axis=1))


def _softmax_neg(D):
    lo = D.min(axis=1, keepdims=True)
    e = np.exp(-(D - lo))
    return e / e.sum(axis=1, keepdims=True)


def _argmin_cols(D, cols):
    """Argmin over a column subset, returning table indices (first index wins ties)."""
    if len(cols) == 0:
        raise ArgumentError("empty candidate class set")
    return cols[np.argmin(D[:, cols], axis=1)]


# -- supervised ----------------------------------------------------------

def _label_idx(table, labels):
    labels = list(labels)
    if labels and isinstance(labels[0], (int, np.integer)):
        return np.asarray(labels, dtype=np.int64)
    return np.array([table.index_of(c) for c in labels], dtype=np.int64)


def _supervised_terms(frame, idx, lam):
    N = len(idx)
    if N == 0:
        raise ArgumentError("empty labeled batch")
    rows = np.arange(N)
    value = frame.D[rows, idx].mean() + lam * l2_penalty(frame.net)
    G = np.zeros_like(frame.D)
    G[rows, idx] = 1.0 / N
    return float(value), G


def _check_supervised(table, net, idx, direction):
    if net.direction != direction:
        raise ArgumentError(f"expected a {direction} net, got {net.direction}")
    if np.any(~table.seen_mask[idx]):
        raise ArgumentError("supervised batch contains an unseen-class label")


def loss_s2f(features, labels, table, net, lam=0.0):
    """Mean squared distance from features to their projected class vectors, plus ridge."""
    idx = _label_idx(table, labels)
    _check_supervised(table, net, idx, "S2F")
    return _supervised_terms(DistanceFrame(net, features, table), idx, lam)[0]


def loss_f2s(features, labels, table, net, lam=0.0):
    """Mean squared distance from projected features to their class vectors, plus ridge."""
    idx = _label_idx(table, labels)
    _check_supervised(table, net, idx, "F2S")
    return _supervised_terms(DistanceFrame(net, features, table), idx, lam)[0]


# -- anchor selection ----------------------------------------------------

def _single(anchor):
    a = np.asarray(anchor, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def select_positive_zsl(anchor, table, net):
    """Nearest unseen class to the anchor."""
    if table.num_unseen < 1:
        raise ArgumentError("no unseen classes to choose a positive from")
    frame = DistanceFrame(net, _single(anchor), table)
    return table.class_ids[_argmin_cols(frame.D, table.unseen_indices)[0]]


def select_positive_gzsl(anchor, table, net):
    """Nearest class over all classes; ``DISCARD`` (None) if it is seen."""
    table.require_task()
    frame = DistanceFrame(net, _single(anchor), table)
    k = _argmin_cols(frame.D, np.arange(table.num_classes))[0]
    return DISCARD if table.seen_mask[k] else table.class_ids[k]


def select_negative(anchor, table, net):
    """Nearest seen class to the anchor."""
    if table.num_seen < 1:
        raise ArgumentError("no seen classes to choose a negative from")
    frame = DistanceFrame(net, _single(anchor), table)
    return table.class_ids[_argmin_cols(frame.D, table.seen_indices)[0]]


def pseudo_label(anchor, table, net, label_space="all"):
    """Nearest class within ``label_space`` ('all' or 'unseen')."""
    cols = label_space_indices(table, label_space)
    frame = DistanceFrame(net, _single(anchor), table)
    return table.class_ids[_argmin_cols(frame.D, cols)[0]]


def _assign(D, table, mode):
    if mode == "zsl":
        pos = _argmin_cols(D, table.unseen_indices)
        discarded = np.zeros(len(D), dtype=bool)
    elif mode == "gzsl":
        pos = _argmin_cols(D, np.arange(table.num_classes))
        discarded = table.seen_mask[pos]
        pos = np.where(discarded, -1, pos)
    else:
        raise ArgumentError(f"mode must be 'zsl' or 'gzsl', got {mode!r}")
    neg = _argmin_cols(D, table.seen_indices)
    return pos, neg, discarded


def assign_triplets(features, table, net, mode="zsl"):
    """Form a :class:`TripletBatch` for unlabeled anchors with the current net."""
    table.require_task()
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    frame = DistanceFrame(net, feats, table)
    return TripletBatch(feats, *_assign(frame.D, table, mode))


# -- triplet -------------------------------------------------------------

def _triplet_terms(D, tb, margin):
    G = np.zeros_like(D)
    act = np.flatnonzero(~tb.discarded)
    if len(act) == 0:
        warnings.warn("all anchors discarded; triplet loss is 0", EmptyTripletBatch, stacklevel=3)
        return 0.0, G
    dpos = D[act, tb.positive[act]]
    dneg = D[act, tb.negative[act]]
    hinge = dpos + margin - dneg
    live = hinge > 0
    n = len(act)
    value = float(np.where(live, hinge, 0.0).sum() / n)
    rows = act[live]
    G[rows, tb.positive[rows]] += 1.0 / n
    G[rows, tb.negative[rows]] -= 1.0 / n
    return value, G


def loss_triplet(tb, table, net, margin=1.0):
    """Hinge loss averaged over non-discarded anchors."""
    if margin < 0:
        raise ArgumentError("margin must be >= 0")
    tb.check(table)
    frame = DistanceFrame(net, tb.anchors, table)
    return _triplet_terms(frame.D, tb, margin)[0]


# -- hubness -------------------------------------------------------------

def histogram(labels, label_space):
    """Count how often each class in ``label_space`` occurs in ``labels``."""
    space = tuple(label_space)
    pos = {c: i for i, c in enumerate(space)}
    counts = np.zeros(len(space), dtype=np.int64)
    for lab in labels:
        if lab not in pos:
            raise ArgumentError(f"label {lab!r} is outside the label space")
        counts[pos[lab]] += 1
    return PredictionHistogram(space, counts)


def skewness_loss_raw(h, labels):
    """Per-sample skewness of predicted-class frequencies.

    Mean and variance are the population moments of the count vector over
    the whole label space, zero counts included. A zero variance gives 0.
    """
    counts = h.counts.astype(np.float64)
    pos = {c: i for i, c in enumerate(h.class_ids)}
    per_sample = counts[[pos[c] for c in labels]]
    return _skew_from_counts(counts, per_sample)


def _skew_from_counts(counts, per_sample):
    N = len(per_sample)
    var = counts.var()
    if N == 0 or var == 0:
        return 0.0
    return float(((per_sample - counts.mean()) ** 3).sum() / (N * var ** 1.5))


def _confidence_terms(D, cols, yhat):
    """Confidence weight and its ``dL/dD``; ``yhat`` are positions within ``cols``."""
    Dl = D[:, cols]
    N = len(D)
    rows = np.arange(N)
    value = float((Dl[rows, yhat] + _logsumexp_neg(Dl)).mean())
    Gl = -_softmax_neg(Dl)
    Gl[rows, yhat] += 1.0
    G = np.zeros_like(D)
    G[:, cols] = Gl / N
    return value, G


def _hubness_parts(D, cols, frozen=None):
    if len(cols) == 0:
        raise ArgumentError("empty label space")
    if frozen is None:
        yhat = np.argmin(D[:, cols], axis=1)
    else:
        where = {int(c): i for i, c in enumerate(cols)}
        yhat = np.array([where[int(k)] for k in frozen], dtype=np.int64)
    counts = np.bincount(yhat, minlength=len(cols)).astype(np.float64)
    raw = _skew_from_counts(counts, counts[yhat])
    return yhat, raw


def confidence_weight(features, table, net, label_space="all"):
    """Mean negative log-softmax probability of each sample's pseudo-label."""
    cols = label_space_indices(table, label_space)
    frame = DistanceFrame(net, features, table)
    yhat, _ = _hubness_parts(frame.D, cols)
    return _confidence_terms(frame.D, cols, yhat)[0]


def _hubness_terms(D, cols, frozen=None):
    yhat, raw = _hubness_parts(D, cols, frozen)
    pi, Gpi = _confidence_terms(D, cols, yhat)
    return pi * raw, raw * Gpi, raw, pi


def loss_hubness(features, table, net, label_space="all"):
    """Confidence-weighted skewness of the batch's pseudo-label histogram."""
    cols = label_space_indices(table, label_space)
    frame = DistanceFrame(net, features, table)
    return float(_hubness_terms(frame.D, cols)[0])


# -- unbiasing -----------------------------------------------------------

def _unbias_terms(D, unseen):
    N = len(D)
    value = float((_logsumexp_neg(D) - _logsumexp_neg(D[:, unseen])).mean())
    G = -_softmax_neg(D)
    G[:, unseen] += _softmax_neg(D[:, unseen])
    return value, G / N


def loss_unbias(features, table, net):
    """Negative log of the softmax mass that falls on unseen classes."""
    table.require_task()
    frame = DistanceFrame(net, features, table)
    return _unbias_terms(frame.D, table.unseen_indices)[0]


# -- combined ------------------------------------------------------------

@dataclass
class TransductiveTerms:
    total: float
    triplet: float
    hubness: float
    unbias: float
    discarded_fraction: float
    grad_D: Optional[np.ndarray] = None


def transductive_terms(frame, weights, mode="zsl", label_space="all", triplets=None,
                       frozen_labels=None):
    """Weighted triplet + hubness + unbiasing terms on one unlabeled batch."""
    table = frame.table
    table.require_task()
    D = frame.D
    if triplets is None:
        triplets = TripletBatch(frame.queries, *_assign(D, table, mode))
    G = np.zeros_like(D)
    lt = lh = lu = 0.0
    if weights.alpha1 > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyTripletBatch)
            lt, g = _triplet_terms(D, triplets, weights.margin)
        G += weights.alpha1 * g
    if weights.alpha2 > 0:
        lh, g, _, _ = _hubness_terms(D, label_space_indices(table, label_space), frozen_labels)
        G += weights.alpha2 * g
    if weights.alpha3 > 0:
        lu, g = _unbias_terms(D, table.unseen_indices)
        G += weights.alpha3 * g
    total = weights.alpha1 * lt + weights.alpha2 * lh + weights.alpha3 * lu
    return TransductiveTerms(total, lt, lh, lu, triplets.discarded_fraction, G)


def loss_transductive(features, table, net, weights, mode="zsl", label_space="all"):
    """``alpha1 * triplet + alpha2 * hubness + alpha3 * unbias``."""
    frame = DistanceFrame(net, features, table)
    return transductive_terms(frame, weights, mode, label_space).total


# -- gradient entry point ------------------------------------------------

LOSS_KINDS = ("s2f", "f2s", "triplet", "hubness", "unbias", "transductive")


@dataclass(frozen=True, eq=False)
class LossSpec:
    """One objective bound to a batch, as consumed by :func:`loss_and_grad`.

    ``labels`` is used by the supervised kinds, ``triplets`` by ``triplet``
    (and optionally ``transductive``), ``frozen_labels`` pins the
    pseudo-labels of ``hubness`` to given table indices.
    """
    kind: str
    table: object
    features: Optional[np.ndarray] = None
    labels: Optional[object] = None
    lam: float = 0.0
    triplets: Optional[TripletBatch] = None
    margin: float = 1.0
    label_space: str = "all"
    weights: Optional[LossWeights] = None
    mode: str = "zsl"
    frozen_labels: Optional[np.ndarray] = None


def loss_and_grad(net, spec):
    """Value of the objective described by ``spec`` and its exact gradient."""
    if spec.kind not in LOSS_KINDS:
        raise ArgumentError(f"unknown loss kind {spec.kind!r}")
    table = spec.table
    feats = spec.triplets.anchors if spec.kind == "triplet" else spec.features
    if feats is None or len(feats) == 0:
        raise ArgumentError("empty batch")
    frame = DistanceFrame(net, feats, table)
    extra = None
    if spec.kind in ("s2f", "f2s"):
        idx = _label_idx(table, spec.labels)
        _check_supervised(table, net, idx, spec.kind.upper())
        value, G = _supervised_terms(frame, idx, spec.lam)
        extra = l2_grad(net, spec.lam)
    elif spec.kind == "triplet":
        spec.triplets.check(table)
        value, G = _triplet_terms(frame.D, spec.triplets, spec.margin)
    elif spec.kind == "hubness":
        cols = label_space_indices(table, spec.label_space)
        value, G, _, _ = _hubness_terms(frame.D, cols, spec.frozen_labels)
    elif spec.kind == "unbias":
        table.require_task()
        value, G = _unbias_terms(frame.D, table.unseen_indices)
    else:
        terms = transductive_terms(frame, spec.weights or LossWeights(), spec.mode,
                                   spec.label_space, spec.triplets, spec.frozen_labels)
        value, G = terms.total, terms.grad_D
    if not np.isfinite(value):
        raise NumericError(f"non-finite {spec.kind} loss")
    grads = frame.backprop(G) if np.any(G) else zero_grads(net)
    if extra is not None:
        grads = add_grads(grads, extra)
    return float(value), grads
