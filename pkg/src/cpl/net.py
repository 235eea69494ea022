"""Two-layer ReLU MLP mapping class attributes to visual prototypes.

Forward, backward, weight decay and Adam are written out by hand for this
fixed architecture: ``relu(relu(a @ W1 + b1) @ W2 + b2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .core import NumericError, ShapeError

PARAM_NAMES = ("W1", "b1", "W2", "b2")
WEIGHT_NAMES = ("W1", "W2")


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Arrays shaped like the network parameters (weights, gradients or moments)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self):
        return [getattr(self, f.name) for f in fields(self)]

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def d_attr(self):
        return self.W1.shape[0]

    @property
    def hidden_size(self):
        return self.W1.shape[1]

    @property
    def d_feat(self):
        return self.W2.shape[1]

    def zeros_like(self):
        return type(self)(*(np.zeros_like(a) for a in self.arrays()))

    def copy(self):
        return type(self)(*(a.copy() for a in self.arrays()))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def same_shape(self, other):
        return all(a.shape == b.shape for a, b in zip(self.arrays(), other.arrays()))

    def bit_equal(self, other):
        return self.same_shape(other) and all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )


class AttributeEmbedder(ParamSet):
    """Network parameters theta, all float64."""


class GradientSet(ParamSet):
    """dL/dtheta, shape-matched to an :class:`AttributeEmbedder`."""


@dataclass(frozen=True, eq=False)
class ForwardCache:
    inputs: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    output_pre: np.ndarray


@dataclass(frozen=True, eq=False)
class AdamState:
    m: ParamSet
    v: ParamSet
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, emb, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(GradientSet(*emb.zeros_like().arrays()),
                   GradientSet(*emb.zeros_like().arrays()), 0, beta1, beta2, eps)


def glorot_scale(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_embedder(d_attr, hidden_size, d_feat, seed):
    """Uniform Glorot weights, zero biases. Deterministic in ``seed``."""
    if min(d_attr, hidden_size, d_feat) < 1:
        raise ShapeError(f"dimensions must be >= 1, got {(d_attr, hidden_size, d_feat)}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1E7]))
    s1 = glorot_scale(d_attr, hidden_size)
    s2 = glorot_scale(hidden_size, d_feat)
    return AttributeEmbedder(
        W1=rng.uniform(-s1, s1, size=(d_attr, hidden_size)),
        b1=np.zeros(hidden_size),
        W2=rng.uniform(-s2, s2, size=(hidden_size, d_feat)),
        b2=np.zeros(d_feat),
    )


def forward(emb, a):
    """Map attribute rows to prototypes.

    ``a`` may be one vector (``d_attr``) or a matrix of rows; the prototype
    output has the matching rank. The cache always holds 2-d arrays.
    """
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    A = a[None, :] if single else a
    if A.ndim != 2 or A.shape[1] != emb.d_attr:
        raise ShapeError(f"attribute input of shape {a.shape} does not match d_attr={emb.d_attr}")
    z1 = A @ emb.W1 + emb.b1
    h = np.maximum(z1, 0.0)
    z2 = h @ emb.W2 + emb.b2
    out = np.maximum(z2, 0.0)
    cache = ForwardCache(A, z1, h, z2)
    return (out[0] if single else out), cache


def backward(emb, cache, upstream):
    """Gradients of a scalar loss given dL/dprototype for every cached row.

    The ReLU derivative at exactly zero is taken as zero.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.output_pre.shape:
        raise ShapeError(f"upstream shape {g.shape} != prototype block {cache.output_pre.shape}")
    dz2 = g * (cache.output_pre > 0)
    dW2 = cache.hidden.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ emb.W2.T) * (cache.hidden_pre > 0)
    dW1 = cache.inputs.T @ dz1
    db1 = dz1.sum(axis=0)
    return GradientSet(W1=dW1, b1=db1, W2=dW2, b2=db2)


def apply_weight_decay(grads, emb, decay):
    """Add the coupled l2 term ``decay * W`` to weight gradients; biases are left alone."""
    if decay < 0:
        raise ValueError(f"weight decay must be >= 0, got {decay}")
    if decay == 0:
        return grads
    return GradientSet(
        W1=grads.W1 + decay * emb.W1,
        b1=grads.b1,
        W2=grads.W2 + decay * emb.W2,
        b2=grads.b2,
    )


def adam_step(emb, grads, state, lr):
    """One bias-corrected Adam update. Returns the new ``(embedder, state)``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    if not emb.same_shape(grads):
        raise ShapeError("gradient shapes do not match the embedder")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite entries in gradient {name}")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(emb.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return (
        AttributeEmbedder(*new_p),
        AdamState(GradientSet(*new_m), GradientSet(*new_v), t, b1, b2, state.eps),
    )
