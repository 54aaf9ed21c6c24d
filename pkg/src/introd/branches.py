"""Two-layer rectifier networks used as the teacher's main branch and as the student.

``DenseBranch`` maps the whole feature vector to ``A`` logits.  ``SlotBranch``
is used for the position preset: one small MLP is shared across the ``S``
context slots and scores each slot from the interaction ``question * token``
together with a one-hot of the slot index (the analogue of a position
embedding).  Both expose the same ``forward``/``backward`` pair and keep their
parameters in an ordered ``dict`` so they can be flattened for checkpoints and
finite-difference checks.
"""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError


def he_normal(rng, fan_out, fan_in):
    return rng.normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)


class DenseBranch:
    kind = "dense"

    def __init__(self, n_inputs, n_classes, hidden=64):
        self.n_inputs = int(n_inputs)
        self.n_classes = int(n_classes)
        self.hidden = int(hidden)
        if self.hidden < 1:
            raise DimensionError("hidden width must be at least 1")
        self.params = {
            "W1": np.zeros((self.hidden, self.n_inputs)),
            "b1": np.zeros(self.hidden),
            "W2": np.zeros((self.n_classes, self.hidden)),
            "b2": np.zeros(self.n_classes),
        }

    def init(self, rng):
        """He fan-in init for the hidden layer; the output layer starts at zero."""
        self.params["W1"] = he_normal(rng, self.hidden, self.n_inputs)
        self.params["b1"] = np.zeros(self.hidden)
        self.params["W2"] = np.zeros((self.n_classes, self.hidden))
        self.params["b2"] = np.zeros(self.n_classes)
        return self

    def spec(self):
        return {"kind": self.kind, "n_inputs": self.n_inputs, "n_classes": self.n_classes, "hidden": self.hidden}

    def forward(self, X):
        p = self.params
        pre = X @ p["W1"].T + p["b1"]
        h = np.maximum(pre, 0.0)
        return h @ p["W2"].T + p["b2"], (X, pre, h)

    def backward(self, cache, dz):
        X, pre, h = cache
        p = self.params
        dh = (dz @ p["W2"]) * (pre > 0)
        return {
            "W1": dh.T @ X,
            "b1": dh.sum(axis=0),
            "W2": dz.T @ h,
            "b2": dz.sum(axis=0),
        }


class SlotBranch:
    """Shared per-slot scorer.  Input rows are ``[question (d), slot_1 (d), ..., slot_S (d)]``."""

    kind = "slot"

    def __init__(self, n_inputs, n_classes, hidden=64):
        self.n_inputs = int(n_inputs)
        self.n_classes = int(n_classes)
        self.hidden = int(hidden)
        if self.n_inputs % (self.n_classes + 1):
            raise DimensionError(
                f"slot input width {self.n_inputs} is not (S + 1) * d for S={self.n_classes}"
            )
        if self.hidden < 1:
            raise DimensionError("hidden width must be at least 1")
        self.token_dim = self.n_inputs // (self.n_classes + 1)
        n_feat = self.token_dim + self.n_classes
        self.params = {
            "W1": np.zeros((self.hidden, n_feat)),
            "b1": np.zeros(self.hidden),
            "W2": np.zeros((1, self.hidden)),
        }

    def init(self, rng):
        n_feat = self.params["W1"].shape[1]
        self.params["W1"] = he_normal(rng, self.hidden, n_feat)
        self.params["b1"] = np.zeros(self.hidden)
        self.params["W2"] = np.zeros((1, self.hidden))
        return self

    def spec(self):
        return {"kind": self.kind, "n_inputs": self.n_inputs, "n_classes": self.n_classes, "hidden": self.hidden}

    def slot_features(self, X):
        n, S, d = X.shape[0], self.n_classes, self.token_dim
        q = X[:, :d]
        tokens = X[:, d:].reshape(n, S, d)
        pos = np.broadcast_to(np.eye(S), (n, S, S))
        return np.concatenate([q[:, None, :] * tokens, pos], axis=2)

    def forward(self, X):
        p = self.params
        F = self.slot_features(X)
        pre = F @ p["W1"].T + p["b1"]
        h = np.maximum(pre, 0.0)
        return (h @ p["W2"].T)[..., 0], (F, pre, h)

    def backward(self, cache, dz):
        F, pre, h = cache
        p = self.params
        dh = dz[..., None] * p["W2"][0] * (pre > 0)
        return {
            "W1": np.einsum("nsh,nsf->hf", dh, F),
            "b1": dh.sum(axis=(0, 1)),
            "W2": np.einsum("ns,nsh->h", dz, h)[None, :],
        }


BRANCHES = {"dense": DenseBranch, "slot": SlotBranch}


def make_branch(kind, n_inputs, n_classes, hidden=64):
    try:
        cls = BRANCHES[kind]
    except KeyError:
        raise DimensionError(f"unknown branch kind {kind!r}") from None
    return cls(n_inputs, n_classes, hidden)


def flatten(params):
    return np.concatenate([v.ravel() for v in params.values()]) if params else np.zeros(0)


def unflatten(template, theta):
    theta = np.asarray(theta, dtype=np.float64)
    expected = sum(v.size for v in template.values())
    if theta.ndim != 1 or theta.size != expected:
        raise DimensionError(f"parameter vector has {theta.size} entries, expected {expected}")
    out, pos = {}, 0
    for k, v in template.items():
        out[k] = theta[pos : pos + v.size].reshape(v.shape).copy()
        pos += v.size
    return out
