"""Feature embeddings, class semantic vectors, and the synthetic benchmark.

Two CSV formats are used for interchange::

    instance_id,label,split,f0,...,f{m-1}
    class_id,name,partition,e0,...,e{d-1}

Floats are written with ``repr`` so that save/load round-trips exactly.
"""
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import set_encoder
from ._io import atomic_write_text, fmt_float
from .errors import (ArgumentError, ClassReferenceError, DimensionError,
                     ParseError, PartitionError, ValidationError)

SPLITS = ("seen-train", "seen-test", "unseen-test")
PARTITIONS = ("seen", "unseen")


@dataclass(frozen=True, eq=False)
class SemanticTable:
    """Per-class semantic vectors with a disjoint seen/unseen partition.

    Class order is significant: the position of a class in ``class_ids`` is
    its class index, and every argmin in the package breaks ties toward the
    lowest index.
    """
    class_ids: tuple
    names: tuple
    vectors: np.ndarray
    seen_mask: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionError("semantic vectors must form a 2-D array")
        seen_mask = np.asarray(self.seen_mask, dtype=bool)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "seen_mask", seen_mask)
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        object.__setattr__(self, "names", tuple(self.names))
        n = len(self.class_ids)
        if vectors.shape[0] != n or len(self.names) != n or seen_mask.shape != (n,):
            raise DimensionError("class ids, names, vectors and partition lengths differ")
        if n and vectors.shape[1] < 1:
            raise DimensionError("semantic_dim must be positive")
        if not np.all(np.isfinite(vectors)):
            raise ValidationError("semantic vectors must be finite")
        index = {}
        for i, cid in enumerate(self.class_ids):
            if cid in index:
                raise ValidationError(f"duplicate class id {cid!r}")
            index[cid] = i
        object.__setattr__(self, "_index", index)

    @property
    def semantic_dim(self):
        return self.vectors.shape[1]

    @property
    def num_classes(self):
        return len(self.class_ids)

    @property
    def num_seen(self):
        return int(self.seen_mask.sum())

    @property
    def num_unseen(self):
        return self.num_classes - self.num_seen

    @property
    def seen_indices(self):
        return np.flatnonzero(self.seen_mask)

    @property
    def unseen_indices(self):
        return np.flatnonzero(~self.seen_mask)

    @property
    def seen_ids(self):
        return tuple(self.class_ids[i] for i in self.seen_indices)

    @property
    def unseen_ids(self):
        return tuple(self.class_ids[i] for i in self.unseen_indices)

    def index_of(self, class_id):
        try:
            return self._index[class_id]
        except KeyError:
            raise ClassReferenceError(f"unknown class id {class_id!r}") from None

    def __contains__(self, class_id):
        return class_id in self._index

    def is_seen(self, class_id):
        return bool(self.seen_mask[self.index_of(class_id)])

    def subset(self, class_ids, seen=None):
        """New table holding ``class_ids`` (in the given order).

        ``seen`` optionally overrides the partition flag per class.
        """
        idx = [self.index_of(c) for c in class_ids]
        mask = self.seen_mask[idx] if seen is None else np.asarray(seen, dtype=bool)
        return SemanticTable(tuple(self.class_ids[i] for i in idx),
                             tuple(self.names[i] for i in idx),
                             self.vectors[idx].copy(), mask)

    def require_task(self):
        """Raise unless the table has at least one seen and one unseen class."""
        if self.num_seen < 1 or self.num_unseen < 1:
            raise ArgumentError(
                f"a ZSL task needs S >= 1 and U >= 1 (got S={self.num_seen}, "
                f"U={self.num_unseen})")

    def equals(self, other):
        return (self.class_ids == other.class_ids and self.names == other.names
                and np.array_equal(self.seen_mask, other.seen_mask)
                and np.array_equal(self.vectors, other.vectors))


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Instance feature vectors with optional labels and split tags."""
    instance_ids: tuple
    features: np.ndarray
    labels: tuple
    splits: tuple

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        for name in ("instance_ids", "labels", "splits"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n = len(self.instance_ids)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise DimensionError(f"features must be an ({n}, m) array, got {feats.shape}")
        if feats.shape[1] < 1:
            raise DimensionError("feature_dim must be positive")
        if len(self.labels) != n or len(self.splits) != n:
            raise DimensionError("ids, labels and splits lengths differ")
        if not np.all(np.isfinite(feats)):
            bad = int(np.flatnonzero(~np.isfinite(feats).all(axis=1))[0])
            raise ValidationError(f"instance {self.instance_ids[bad]!r} has a non-finite feature")
        if len(set(self.instance_ids)) != n:
            raise ValidationError("instance ids are not unique")
        for iid, split, label in zip(self.instance_ids, self.splits, self.labels):
            if split not in SPLITS:
                raise ValidationError(f"instance {iid!r}: unknown split {split!r}")
            if split == "seen-train" and label is None:
                raise ValidationError(f"seen-train instance {iid!r} has no label")

    def __len__(self):
        return len(self.instance_ids)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def check_against(self, table):
        """Check label references against ``table``'s partitions."""
        if table.num_classes and self.feature_dim < 1:
            raise DimensionError("empty feature vectors")
        for iid, split, label in zip(self.instance_ids, self.splits, self.labels):
            _check_label(table, split, label, f"instance {iid!r}")

    def select(self, *splits):
        rows = [i for i, s in enumerate(self.splits) if s in splits]
        return self.take(rows)

    def take(self, rows):
        rows = list(rows)
        return EmbeddingSet(tuple(self.instance_ids[i] for i in rows),
                            self.features[rows].reshape(len(rows), self.feature_dim),
                            tuple(self.labels[i] for i in rows),
                            tuple(self.splits[i] for i in rows))

    def label_indices(self, table):
        """Class index per instance, -1 where the label is missing."""
        return np.array([-1 if lab is None else table.index_of(lab) for lab in self.labels],
                        dtype=np.int64)

    def equals(self, other):
        return (self.instance_ids == other.instance_ids and self.labels == other.labels
                and self.splits == other.splits
                and np.array_equal(self.features, other.features))


def _check_label(table, split, label, where, line=None):
    if label is None:
        return
    if label not in table:
        raise ClassReferenceError(f"{where}: unknown class id {label!r}", line)
    seen = table.is_seen(label)
    if split in ("seen-train", "seen-test") and not seen:
        raise ClassReferenceError(f"{where}: {split} row references unseen class {label!r}", line)
    if split == "unseen-test" and seen:
        raise ClassReferenceError(f"{where}: unseen-test row references seen class {label!r}", line)


def _parse_float(text, line):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line) from None
    if not np.isfinite(value):
        raise ValidationError(f"non-finite value {text!r}", line)
    return value


def _read_rows(path, fixed_cols, prefix):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if tuple(header[:len(fixed_cols)]) != fixed_cols:
            raise ParseError(f"header must start with {','.join(fixed_cols)}", 1)
        dims = header[len(fixed_cols):]
        expected = [f"{prefix}{j}" for j in range(len(dims))]
        if not dims or dims != expected:
            raise ParseError(f"vector columns must be {prefix}0..{prefix}{{n-1}}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(fixed_cols):
                raise ParseError(f"expected at least {len(fixed_cols)} columns", lineno)
            values = row[len(fixed_cols):]
            if len(values) != len(dims):
                raise DimensionError(
                    f"vector has length {len(values)}, expected {len(dims)}", lineno)
            yield lineno, row[:len(fixed_cols)], [_parse_float(v, lineno) for v in values], len(dims)


def load_semantics(path):
    """Read a semantics CSV into a :class:`SemanticTable`."""
    ids, names, vecs, mask = [], [], [], []
    seen_part = {}
    dim = None
    for lineno, (cid, name, part), vec, dim in _read_rows(path, ("class_id", "name", "partition"), "e"):
        if part not in PARTITIONS:
            raise ParseError(f"partition must be seen or unseen, got {part!r}", lineno)
        if cid in seen_part:
            if seen_part[cid] != part:
                raise PartitionError(f"class {cid!r} listed as both seen and unseen", lineno)
            raise ValidationError(f"duplicate class id {cid!r}", lineno)
        seen_part[cid] = part
        ids.append(cid)
        names.append(name)
        vecs.append(vec)
        mask.append(part == "seen")
    if dim is None:
        raise ParseError("no classes in semantics file")
    return SemanticTable(tuple(ids), tuple(names), np.array(vecs).reshape(len(ids), dim), np.array(mask))


def load_embeddings(path, table):
    """Read an embeddings CSV, validating labels against ``table``."""
    ids, labels, splits, feats = [], [], [], []
    known = set()
    dim = None
    for lineno, (iid, label, split), vec, dim in _read_rows(path, ("instance_id", "label", "split"), "f"):
        if split not in SPLITS:
            raise ParseError(f"unknown split {split!r}", lineno)
        if iid in known:
            raise ValidationError(f"duplicate instance id {iid!r}", lineno)
        known.add(iid)
        label = label or None
        if split == "seen-train" and label is None:
            raise ValidationError("seen-train row has no label", lineno)
        _check_label(table, split, label, f"instance {iid!r}", lineno)
        ids.append(iid)
        labels.append(label)
        splits.append(split)
        feats.append(vec)
    if dim is None:
        raise ParseError("no instances in embeddings file")
    return EmbeddingSet(tuple(ids), np.array(feats).reshape(len(ids), dim),
                        tuple(labels), tuple(splits))


def semantics_csv(table):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id", "name", "partition"] + [f"e{j}" for j in range(table.semantic_dim)])
    for cid, name, seen, vec in zip(table.class_ids, table.names, table.seen_mask, table.vectors):
        w.writerow([cid, name, "seen" if seen else "unseen"] + [fmt_float(v) for v in vec])
    return buf.getvalue()


def embeddings_csv(data):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance_id", "label", "split"] + [f"f{j}" for j in range(data.feature_dim)])
    for iid, label, split, vec in zip(data.instance_ids, data.labels, data.splits, data.features):
        w.writerow([iid, label or "", split] + [fmt_float(v) for v in vec])
    return buf.getvalue()


def save_semantics(path, table):
    atomic_write_text(path, semantics_csv(table))


def save_embeddings(path, data):
    atomic_write_text(path, embeddings_csv(data))


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic clustered benchmark.

    ``prototype_scale`` sets the per-coordinate spread of the class
    prototypes; it is kept well inside (-1, 1) so that a tanh output layer
    can reach every prototype.
    """
    num_seen_classes: int = 10
    num_unseen_classes: int = 5
    feature_dim: int = 64
    semantic_dim: int = 16
    instances_per_class: int = 100
    cluster_spread: float = 1.0
    semantic_noise: float = 0.1
    mode: str = "clusters"
    seed: int = 0
    prototype_scale: float = 0.3
    points_per_set: int = 64
    encoder_hidden: int = 32

    def __post_init__(self):
        for name in ("num_seen_classes", "num_unseen_classes", "feature_dim",
                     "semantic_dim", "instances_per_class", "points_per_set", "encoder_hidden"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ArgumentError(f"{name} must be a positive integer, got {value!r}")
        if not self.cluster_spread > 0:
            raise ArgumentError("cluster_spread must be > 0")
        if not self.semantic_noise >= 0:
            raise ArgumentError("semantic_noise must be >= 0")
        if not self.prototype_scale > 0:
            raise ArgumentError("prototype_scale must be > 0")
        if self.mode not in ("clusters", "pointsets"):
            raise ArgumentError(f"mode must be clusters or pointsets, got {self.mode!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ArgumentError("seed must be an unsigned integer")


def train_count(n):
    """Seen-train instances per class; the rest of the class is seen-test."""
    return max(1, (4 * n) // 5) if n > 1 else n


def make_synthetic(spec, _spread_override=None):
    """Generate ``(EmbeddingSet, SemanticTable)`` from ``spec``.

    Class prototypes are a fixed random linear image of the class semantic
    vectors plus ``semantic_noise``; instances scatter isotropically around
    their prototype with standard deviation ``cluster_spread``. Seen
    classes come first in the class order.

    ``_spread_override`` is a test hook that allows a zero spread.
    """
    spread = spec.cluster_spread if _spread_override is None else _spread_override
    rng = np.random.default_rng(spec.seed)
    S, U = spec.num_seen_classes, spec.num_unseen_classes
    K, d, m, n = S + U, spec.semantic_dim, spec.feature_dim, spec.instances_per_class

    sem = rng.standard_normal((K, d))
    class_ids = tuple(f"c{k:03d}" for k in range(K))
    names = tuple(f"{'seen' if k < S else 'unseen'}_{k}" for k in range(K))
    table = SemanticTable(class_ids, names, sem, np.arange(K) < S)

    if spec.mode == "clusters":
        mix = rng.standard_normal((d, m)) * (spec.prototype_scale / np.sqrt(d))
        protos = sem @ mix + spec.semantic_noise * rng.standard_normal((K, m))
        noise = rng.standard_normal((K, n, m))
        feats = protos[:, None, :] + spread * noise
    else:
        feats = _pointset_features(spec, sem, spread, rng)

    ids, labels, splits = [], [], []
    n_train = train_count(n)
    for k in range(K):
        for j in range(n):
            ids.append(f"i{k * n + j:06d}")
            labels.append(class_ids[k])
            if k < S:
                splits.append("seen-train" if j < n_train else "seen-test")
            else:
                splits.append("unseen-test")
    data = EmbeddingSet(tuple(ids), feats.reshape(K * n, m), tuple(labels), tuple(splits))
    return data, table


def _pointset_features(spec, sem, spread, rng):
    K, d, n, P = sem.shape[0], spec.semantic_dim, spec.instances_per_class, spec.points_per_set
    params = set_encoder.EncoderParams.create(spec.feature_dim, spec.encoder_hidden,
                                              seed=int(rng.integers(2**32)))
    base = rng.standard_normal((P, 3))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    mix = rng.standard_normal((d, 9)) * (spec.prototype_scale / np.sqrt(d))
    deform = np.eye(3) + (sem @ mix + spec.semantic_noise * rng.standard_normal((K, 9))).reshape(K, 3, 3)
    feats = np.empty((K, n, spec.feature_dim))
    for k in range(K):
        shape = base @ deform[k].T
        for j in range(n):
            pts = shape + spread * rng.standard_normal((P, 3))
            feats[k, j] = set_encoder.encode(pts[rng.permutation(P)], params)
    return feats


def hold_out_unseen_validation(table, k, seed=0):
    """Split ``k`` random seen classes off as a validation unseen set.

    Returns ``(reduced, validation)``: ``reduced`` drops the held-out classes
    and keeps everything else as-is; ``validation`` holds the remaining seen
    classes plus the held-out ones re-tagged unseen.
    """
    S = table.num_seen
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ArgumentError(f"k must be a positive integer, got {k!r}")
    if k >= S:
        raise ArgumentError(f"cannot hold out {k} of {S} seen classes")
    rng = np.random.default_rng(seed)
    seen = table.seen_ids
    held = set(rng.choice(S, size=k, replace=False).tolist())
    kept = [c for i, c in enumerate(seen) if i not in held]
    out = [c for i, c in enumerate(seen) if i in held]
    reduced_ids = [c for c in table.class_ids if c not in set(out)]
    reduced = table.subset(reduced_ids)
    validation = table.subset(kept + out, seen=[True] * len(kept) + [False] * len(out))
    return reduced, validation


def apply_holdout(data, validation):
    """Re-tag the rows of ``data`` for a validation table.

    Rows of held-out classes become ``unseen-test``; rows of classes absent
    from ``validation`` are dropped.
    """
    rows, splits = [], []
    for i, (label, split) in enumerate(zip(data.labels, data.splits)):
        if label is None or label not in validation:
            continue
        rows.append(i)
        splits.append(split if validation.is_seen(label) else "unseen-test")
    sub = data.take(rows)
    return EmbeddingSet(sub.instance_ids, sub.features, sub.labels, tuple(splits))
