"""Frozen permutation-invariant encoder for 3D point sets.

Each point goes through the same two-layer map ``h`` and the per-point
features are max-pooled, so the output does not depend on point order.
The weights are drawn once from a seed and never trained; the encoder only
exists to turn synthetic point sets into realistic, noisy feature vectors.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

ACTIVATIONS = {"tanh": np.tanh, "relu": lambda z: np.maximum(z, 0.0)}


@dataclass(frozen=True)
class EncoderParams:
    w1: np.ndarray  # (3, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, out)
    b2: np.ndarray
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.w1.shape[0] != 3 or self.w1.shape[1] != self.w2.shape[0]:
            raise ArgumentError(
                f"encoder shapes do not chain: {self.w1.shape} -> {self.w2.shape}")
        if self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],):
            raise ArgumentError("encoder bias shapes do not match weights")
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")
        for name in ("w1", "b1", "w2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ArgumentError(f"encoder parameter {name} is not finite")

    @property
    def out_dim(self):
        return self.w2.shape[1]

    @classmethod
    def create(cls, out_dim, hidden=32, seed=0, activation="tanh"):
        if out_dim < 1 or hidden < 1:
            raise ArgumentError("encoder dimensions must be positive")
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, 1.0, size=(3, hidden))
        b1 = rng.normal(0.0, 0.1, size=hidden)
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, out_dim))
        b2 = rng.normal(0.0, 0.1, size=out_dim)
        return cls(w1, b1, w2, b2, activation, seed)


def point_features(points, params):
    """Per-point features ``h(x_i)`` as an ``(n, out_dim)`` array.

    Matrix products are written as broadcast-and-reduce rather than BLAS
    calls: a BLAS kernel may round a row differently depending on where
    it sits in the block, which would break bitwise permutation invariance.
    """
    act = ACTIVATIONS[params.activation]
    x = np.asarray(points, dtype=np.float64)
    z1 = x[:, 0:1] * params.w1[0] + x[:, 1:2] * params.w1[1] + x[:, 2:3] * params.w1[2]
    a1 = act(z1 + params.b1)
    z2 = (a1[:, :, None] * params.w2[None, :, :]).sum(axis=1)
    return act(z2 + params.b2)


def encode(points, params):
    """Max-pool the per-point features of a point set into one vector."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ArgumentError(f"point set must have shape (n, 3), got {x.shape}")
    if x.shape[0] == 0:
        raise ArgumentError("cannot encode an empty point set")
    if not np.all(np.isfinite(x)):
        raise ArgumentError("point coordinates must be finite")
    return point_features(x, params).max(axis=0)
