"""Numeric primitives: stable softmax, cross-entropy, KL, SGD and a seeded PRNG.

Every function operates on the last axis, so a single vector of shape ``(A,)``
and a batch of shape ``(n, A)`` are both accepted.  All arithmetic is float64.

The random number generator is SplitMix64 used in counter mode: the ``i``-th
64-bit output of a stream keyed by ``seed`` is ``mix64(seed + (i + 1) * G)``
with ``G = 0x9E3779B97F4A7C15``.  Because each output depends only on
``(seed, i)``, draws can be addressed directly by index, which makes parallel
and serial generation identical and the streams reproducible in any language
with 64-bit wrapping arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DimensionError,
    InvalidConfigError,
    InvalidInputError,
    OracleFailureError,
    TrainingDivergedError,
)

EPS = 1e-12

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def softmax(z):
    """Numerically stable softmax along the last axis, clamped below at ``EPS``."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax received non-finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.maximum(p, EPS)


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1:] != q.shape[-1:]:
        raise DimensionError(f"length mismatch: {p.shape[-1:]} vs {q.shape[-1:]}")
    return p, q


def cross_entropy(p_gt, p):
    """``-sum p_gt * log p`` with ``p`` clamped to ``[EPS, 1]``."""
    p_gt, p = _check_pair(p_gt, p)
    return -(p_gt * np.log(np.clip(p, EPS, 1.0))).sum(axis=-1)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return cross_entropy(p, p)


def kl_divergence(p_t, p_s):
    """KL(p_t || p_s) with both arguments clamped to ``[EPS, 1]``."""
    p_t, p_s = _check_pair(p_t, p_s)
    pt = np.clip(p_t, EPS, 1.0)
    ps = np.clip(p_s, EPS, 1.0)
    # zero-mass target entries contribute nothing
    terms = np.where(p_t > 0, pt * (np.log(pt) - np.log(ps)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def finite_diff_gradient(f, theta, h=1e-5):
    """Central-difference gradient of a scalar function ``f`` at ``theta``."""
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        f_plus = float(f(theta))
        theta[i] = orig - h
        f_minus = float(f(theta))
        theta[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise OracleFailureError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 128

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigError("momentum must lie in [0, 1)")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise InvalidConfigError("epochs must be a non-negative integer")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InvalidConfigError("batch_size must be a positive integer")


def sgd_step(params, grads, velocity, cfg):
    """One heavy-ball step.  Returns ``(new_params, new_velocity)``.

    v <- momentum * v + grads;  params <- params - lr * v
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise DimensionError(f"params {params.shape} vs grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergedError("non-finite gradient")
    if velocity is None:
        velocity = np.zeros_like(params)
    velocity = cfg.momentum * velocity + grads
    return params - cfg.learning_rate * velocity, velocity


def mix64(x):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.array(x, dtype=np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class RngState:
    """Counter-based SplitMix64 stream.

    ``split(label)`` derives an independent child stream; ``*_at`` methods are
    stateless lookups by counter, the remaining draw methods advance
    ``counter``.  An instance is single-owner: do not share one across threads.
    """

    def __init__(self, seed, counter=0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def __repr__(self):
        return f"RngState(seed={self.seed}, counter={self.counter})"

    def __eq__(self, other):
        return isinstance(other, RngState) and (self.seed, self.counter) == (other.seed, other.counter)

    def split(self, *labels):
        key = np.array([self.seed], dtype=np.uint64)
        for label in labels:
            lab = np.array([int(label) & _MASK64], dtype=np.uint64)
            key = mix64(key ^ mix64(lab + _GOLDEN))
        return RngState(int(key[0]))

    def bits_at(self, counters):
        c = np.asarray(counters, dtype=np.uint64)
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + (c + np.uint64(1)) * _GOLDEN
        return mix64(state)

    def uniform_at(self, counters):
        """Doubles in ``[0, 1)`` built from the top 53 bits."""
        return (self.bits_at(counters) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal_at(self, counters):
        """Standard normals via Box-Muller; consumes counters ``2k`` and ``2k+1``."""
        c = np.asarray(counters, dtype=np.uint64)
        u1 = 1.0 - self.uniform_at(c * np.uint64(2))
        u2 = self.uniform_at(c * np.uint64(2) + np.uint64(1))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def _take(self, n):
        start = self.counter
        self.counter += int(n)
        return np.arange(start, start + int(n), dtype=np.uint64)

    def bits(self, size):
        n = int(np.prod(size))
        return self.bits_at(self._take(n)).reshape(size)

    def uniform(self, size):
        n = int(np.prod(size))
        return self.uniform_at(self._take(n)).reshape(size)

    def normal(self, size):
        n = int(np.prod(size))
        c = self._take(2 * n)
        u1 = 1.0 - self.uniform_at(c[0::2])
        u2 = self.uniform_at(c[1::2])
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(size)

    def integers(self, high, size):
        return np.floor(self.uniform(size) * high).astype(np.int64)

    def permutation(self, n):
        return np.argsort(self.bits(n), kind="stable")
