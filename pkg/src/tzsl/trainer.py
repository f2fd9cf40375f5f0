"""Two-stage training: inductive fit on seen data, then transductive refinement."""
import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ._io import atomic_write_text, fmt_float
from .errors import ArgumentError, NumericError
from .losses import (LABEL_SPACES, MODES, DistanceFrame, LossWeights, _supervised_terms,
                     transductive_terms)
from .projection import AdamState, adam_step, add_grads, init_net, l2_grad

PRESETS = {
    "modelnet": {"alpha1": 0.4, "alpha2": 0.001, "alpha3": 0.001, "lr": 1e-4},
    "mcgill": {"alpha1": 0.4, "alpha2": 0.001, "alpha3": 0.001, "lr": 1e-4},
    "scanobjectnn": {"alpha1": 0.2, "alpha2": 0.2, "alpha3": 0.1, "lr": 1e-4},
    "awa2": {"alpha1": 0.12, "alpha2": 0.001, "alpha3": 0.01, "lr": 1e-4},
    "cub": {"alpha1": 0.1, "alpha2": 0.001, "alpha3": 0.001, "lr": 1e-4},
}


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "zsl"
    direction: str = "S2F"
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-4
    labeled_batch: int = 128
    unlabeled_batch: int = 128
    inductive_epochs: int = 50
    transductive_epochs: int = 50
    hidden_dim: int = 512
    activation: str = "tanh"
    seed: int = 0
    label_space: str = "all"
    patience: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.direction not in ("S2F", "F2S"):
            raise ArgumentError(f"direction must be S2F or F2S, got {self.direction!r}")
        if self.label_space not in LABEL_SPACES:
            raise ArgumentError(f"label_space must be one of {LABEL_SPACES}")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ArgumentError("lr must be a finite number >= 0")
        for name in ("labeled_batch", "unlabeled_batch", "hidden_dim", "patience"):
            if int(getattr(self, name)) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        for name in ("inductive_epochs", "transductive_epochs"):
            if int(getattr(self, name)) < 0:
                raise ArgumentError(f"{name} must be >= 0")

    @classmethod
    def from_preset(cls, name, **overrides):
        try:
            p = PRESETS[name]
        except KeyError:
            raise ArgumentError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        base = overrides.pop("weights", LossWeights())
        weights = replace(base, alpha1=p["alpha1"], alpha2=p["alpha2"], alpha3=p["alpha3"])
        overrides.setdefault("lr", p["lr"])
        return cls(weights=weights, **overrides)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if isinstance(doc.get("weights"), dict):
            doc["weights"] = LossWeights(**doc["weights"])
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ArgumentError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    supervised_loss: float
    triplet_loss: float = 0.0
    hubness_loss: float = 0.0
    unbias_loss: float = 0.0
    total: float = 0.0
    discarded_fraction: float = 0.0


LOG_COLUMNS = [f.name for f in fields(EpochRecord)]


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def stage(self, name):
        return [r for r in self.records if r.stage == name]

    def extend(self, other):
        self.records.extend(other.records)
        return self

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, r.stage] + [fmt_float(getattr(r, c)) for c in LOG_COLUMNS[2:]])
        return buf.getvalue()

    def save(self, path):
        atomic_write_text(path, self.to_csv())


class _Cycler:
    """Endless stream of shuffled index batches over ``range(n)``."""

    def __init__(self, n, batch, rng):
        self.n, self.batch, self.rng = n, min(batch, n), rng
        self._order = np.empty(0, dtype=np.int64)

    def next(self):
        while len(self._order) < self.batch:
            self._order = np.concatenate([self._order, self.rng.permutation(self.n)])
        out, self._order = self._order[:self.batch], self._order[self.batch:]
        return out


def net_dims(direction, table, feature_dim, hidden):
    if direction == "S2F":
        return (table.semantic_dim, hidden, feature_dim)
    return (feature_dim, hidden, table.semantic_dim)


def _seen_train(data, table):
    lab = data.select("seen-train")
    if len(lab) == 0:
        raise ArgumentError("no seen-train instances to train on")
    return lab.features, lab.label_indices(table)


def _check_finite(value, epoch, what):
    if not math.isfinite(value):
        raise NumericError(f"{what} became non-finite at epoch {epoch}", epoch=epoch)


def train_inductive(data, table, cfg, init=None):
    """Fit the projection on seen-train instances only.

    The unseen classes of ``table`` never enter the computation.
    """
    seen_table = table.subset(table.seen_ids)
    X, y = _seen_train(data, seen_table)
    dims = net_dims(cfg.direction, table, data.feature_dim, cfg.hidden_dim)
    net = init_net(cfg.direction, dims, cfg.activation, seed=cfg.seed) if init is None else init.copy()
    if net.dims != dims:
        raise ArgumentError(f"initial net dims {net.dims} do not match data {dims}")
    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState.for_net(net, lr=cfg.lr)
    lam = cfg.weights.lam
    B = min(cfg.labeled_batch, len(X))
    log = TrainLog()
    for epoch in range(1, cfg.inductive_epochs + 1):
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), B):
            rows = order[start:start + B]
            frame = DistanceFrame(net, X[rows], seen_table)
            value, G = _supervised_terms(frame, y[rows], lam)
            _check_finite(value, epoch, "supervised loss")
            grads = add_grads(frame.backprop(G), l2_grad(net, lam))
            adam_step(net, grads, state)
            losses.append(value)
        mean = float(np.mean(losses))
        log.records.append(EpochRecord(epoch, "inductive", mean, total=mean))
    return net, log


def unlabeled_pool(data, mode):
    splits = ("unseen-test",) if mode == "zsl" else ("seen-test", "unseen-test")
    return data.select(*splits).features


def train_transductive(w_ind, data, table, cfg, validation=None):
    """Refine an inductive net with labeled seen data plus unlabeled test data.

    Every step draws one labeled and one unlabeled batch, re-assigns anchors
    and pseudo-labels with the current weights, and takes an Adam step on
    supervised loss + weighted transductive loss. Labels of unlabeled rows
    are never read.

    ``validation``, if given, is ``(data, table)`` evaluated after each
    epoch; training stops after ``cfg.patience`` epochs without improvement
    and the best weights are returned.
    """
    table.require_task()
    X, y = _seen_train(data, table)
    U = unlabeled_pool(data, cfg.mode)
    if len(U) == 0:
        raise ArgumentError("no unlabeled instances for transductive training")
    dims = net_dims(cfg.direction, table, data.feature_dim, cfg.hidden_dim)
    if w_ind.dims != dims or w_ind.direction != cfg.direction:
        raise ArgumentError(f"inductive net {w_ind.direction}{w_ind.dims} does not match "
                            f"{cfg.direction}{dims}")
    net = w_ind.copy()
    rng = np.random.default_rng([cfg.seed, 2])
    lab_stream = _Cycler(len(X), cfg.labeled_batch, rng)
    unl_stream = _Cycler(len(U), cfg.unlabeled_batch, rng)
    steps = max(math.ceil(len(X) / lab_stream.batch), math.ceil(len(U) / unl_stream.batch))
    state = AdamState.for_net(net, lr=cfg.lr)
    w, lam = cfg.weights, cfg.weights.lam
    log = TrainLog()
    best, best_score, stale = None, -np.inf, 0
    for epoch in range(1, cfg.transductive_epochs + 1):
        acc = np.zeros(6)
        for _ in range(steps):
            rows = lab_stream.next()
            frame_l = DistanceFrame(net, X[rows], table)
            sup, G_l = _supervised_terms(frame_l, y[rows], lam)
            frame_u = DistanceFrame(net, U[unl_stream.next()], table)
            terms = transductive_terms(frame_u, w, cfg.mode, cfg.label_space)
            total = sup + terms.total
            _check_finite(total, epoch, "transductive loss")
            grads = add_grads(frame_l.backprop(G_l), l2_grad(net, lam))
            if np.any(terms.grad_D):
                grads = add_grads(grads, frame_u.backprop(terms.grad_D))
            adam_step(net, grads, state)
            acc += (sup, terms.triplet, terms.hubness, terms.unbias, total, terms.discarded_fraction)
        acc /= steps
        log.records.append(EpochRecord(epoch, "transductive", *map(float, acc)))
        if validation is not None:
            score = _validation_score(net, validation, cfg.mode)
            if score > best_score:
                best, best_score, stale = net.copy(), score, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best is not None:
        net = best
    return net, log


def _validation_score(net, validation, mode):
    from .evaluation import evaluate
    vdata, vtable = validation
    report = evaluate(vdata, vtable, net, mode)
    return report.hm if mode == "gzsl" else report.acc_unseen


def train(data, table, cfg, validation=None):
    """Inductive stage followed by transductive stage; returns both nets and the joint log."""
    w_ind, log = train_inductive(data, table, cfg)
    w_tns, log_t = train_transductive(w_ind, data, table, cfg, validation)
    return w_ind, w_tns, log.extend(log_t)
