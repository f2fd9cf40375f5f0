"""Two-layer projection network with hand-written backprop and Adam.

``S2F`` nets map semantic vectors into feature space; ``F2S`` nets map
features into semantic space. Both are ``act(act(v @ W1 + b1) @ W2 + b2)``
and everything runs in float64.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text, dumps_json
from .errors import ArgumentError, DimensionError, NumericError

DIRECTIONS = ("S2F", "F2S")
PARAM_NAMES = ("w1", "b1", "w2", "b2")
WEIGHT_NAMES = ("w1", "w2")


def _tanh_grad(z, a):
    return 1.0 - a * a


def _relu_grad(z, a):
    return (z > 0).astype(np.float64)


_ACT = {
    "tanh": (np.tanh, _tanh_grad),
    "relu": (lambda z: np.maximum(z, 0.0), _relu_grad),
}


@dataclass
class ProjectionNet:
    direction: str
    activation: str
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ArgumentError(f"direction must be S2F or F2S, got {self.direction!r}")
        if self.activation not in _ACT:
            raise ArgumentError(f"activation must be tanh or relu, got {self.activation!r}")
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if (self.w1.ndim != 2 or self.w2.ndim != 2 or self.w1.shape[1] != self.w2.shape[0]
                or self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],)):
            raise ArgumentError(
                f"layer shapes do not chain: w1{self.w1.shape} b1{self.b1.shape} "
                f"w2{self.w2.shape} b2{self.b2.shape}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"parameter {name} is not finite", param=name)

    @property
    def dims(self):
        return (self.w1.shape[0], self.w1.shape[1], self.w2.shape[1])

    @property
    def in_dim(self):
        return self.w1.shape[0]

    @property
    def out_dim(self):
        return self.w2.shape[1]

    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return ProjectionNet(self.direction, self.activation,
                             *(getattr(self, n).copy() for n in PARAM_NAMES))

    def equals(self, other):
        return (self.direction == other.direction and self.activation == other.activation
                and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES))


def init_net(direction, dims, activation="tanh", seed=0):
    """Xavier-uniform weights, zero biases. ``dims = (in, hidden, out)``."""
    dims = tuple(dims)
    if len(dims) != 3 or any(not isinstance(n, (int, np.integer)) or n < 1 for n in dims):
        raise ArgumentError(f"dims must be three positive integers, got {dims!r}")
    rng = np.random.default_rng(seed)
    d_in, hidden, d_out = (int(n) for n in dims)
    lim1 = np.sqrt(6.0 / (d_in + hidden))
    lim2 = np.sqrt(6.0 / (hidden + d_out))
    w1 = rng.uniform(-lim1, lim1, size=(d_in, hidden))
    w2 = rng.uniform(-lim2, lim2, size=(hidden, d_out))
    return ProjectionNet(direction, activation, w1, np.zeros(hidden), w2, np.zeros(d_out))


def _rowwise(x, w):
    # Stacked 1-row products: each row is computed by the same kernel call
    # as a lone vector would be, so batched output equals per-row output.
    return np.matmul(x[:, None, :], w)[:, 0, :]


def forward_cached(net, x):
    """Forward a 2-D batch, returning the output and a cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ArgumentError(f"expected input of shape (B, {net.in_dim}), got {x.shape}")
    act = _ACT[net.activation][0]
    z1 = _rowwise(x, net.w1) + net.b1
    a1 = act(z1)
    z2 = _rowwise(a1, net.w2) + net.b2
    a2 = act(z2)
    return a2, (x, z1, a1, z2, a2)


def forward(net, v):
    """Apply the net to a vector or, rowwise, to a 2-D batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        if v.shape[0] != net.in_dim:
            raise ArgumentError(f"expected a vector of length {net.in_dim}, got {v.shape[0]}")
        return forward_cached(net, v[None, :])[0][0]
    return forward_cached(net, v)[0]


def backward(net, cache, grad_out):
    """Gradients of a scalar loss w.r.t. every parameter, given dL/d(output)."""
    x, z1, a1, z2, a2 = cache
    dact = _ACT[net.activation][1]
    g2 = grad_out * dact(z2, a2)
    g1 = (g2 @ net.w2.T) * dact(z1, a1)
    return {"w1": x.T @ g1, "b1": g1.sum(axis=0), "w2": a1.T @ g2, "b2": g2.sum(axis=0)}


def l2_penalty(net):
    """Sum of squared weight-matrix entries; biases are not penalised."""
    return float(sum(np.sum(getattr(net, n) ** 2) for n in WEIGHT_NAMES))


def l2_grad(net, lam):
    return {"w1": 2.0 * lam * net.w1, "b1": np.zeros_like(net.b1),
            "w2": 2.0 * lam * net.w2, "b2": np.zeros_like(net.b2)}


def add_grads(a, b):
    return {k: a[k] + b[k] for k in a}


def scale_grads(g, s):
    return {k: s * v for k, v in g.items()}


def zero_grads(net):
    return {n: np.zeros_like(getattr(net, n)) for n in PARAM_NAMES}


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_net(cls, net, lr=1e-4, **kw):
        state = cls(lr=lr, **kw)
        state.m = zero_grads(net)
        state.v = zero_grads(net)
        return state


def adam_step(net, grads, state):
    """One bias-corrected Adam update. Mutates and returns ``(net, state)``."""
    if not state.m:
        state.m, state.v = zero_grads(net), zero_grads(net)
    for name in PARAM_NAMES:
        p = getattr(net, name)
        if name not in grads or grads[name].shape != p.shape or state.m[name].shape != p.shape:
            raise ArgumentError(f"gradient/state shape mismatch for {name}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name in PARAM_NAMES:
        g = grads[name]
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        setattr(net, name, getattr(net, name) - step)
    return net, state


def net_to_dict(net, state=None):
    doc = {
        "direction": net.direction,
        "dims": list(net.dims),
        "activation": net.activation,
        "layers": [
            {"weight": net.w1.tolist(), "bias": net.b1.tolist()},
            {"weight": net.w2.tolist(), "bias": net.b2.tolist()},
        ],
    }
    if state is not None:
        doc["adam"] = {
            "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
            "t": state.t,
            "m": {k: v.tolist() for k, v in state.m.items()},
            "v": {k: v.tolist() for k, v in state.v.items()},
        }
    return doc


def net_from_dict(doc):
    """Rebuild ``(net, adam_state_or_None)`` from a checkpoint document."""
    try:
        l1, l2 = doc["layers"]
        net = ProjectionNet(doc["direction"], doc["activation"],
                            np.array(l1["weight"], dtype=np.float64).reshape(doc["dims"][0], doc["dims"][1]),
                            np.array(l1["bias"], dtype=np.float64),
                            np.array(l2["weight"], dtype=np.float64).reshape(doc["dims"][1], doc["dims"][2]),
                            np.array(l2["bias"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise DimensionError(f"malformed checkpoint: {exc}") from exc
    if list(net.dims) != list(doc["dims"]):
        raise DimensionError(f"checkpoint dims {doc['dims']} disagree with weights {net.dims}")
    state = None
    if "adam" in doc:
        a = doc["adam"]
        state = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"],
                          m={k: np.array(v, dtype=np.float64) for k, v in a["m"].items()},
                          v={k: np.array(v, dtype=np.float64) for k, v in a["v"].items()})
    return net, state


def save_checkpoint(path, net, state=None):
    atomic_write_text(path, dumps_json(net_to_dict(net, state)))


def load_checkpoint(path):
    with open(path) as fh:
        return net_from_dict(json.load(fh))
