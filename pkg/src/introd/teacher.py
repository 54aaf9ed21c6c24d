"""Two-branch causal teacher with a factual (ID) and a counterfactual (OOD) readout.

The main branch sees question and context; the shortcut branch sees only the
bias source (a per-question-type logit table, or a single position-prior
vector).  Their logits are fused by ``sum`` (log-space ensembling) or
``gate`` (the main logits masked by a sigmoid of the shortcut logits).

* ID readout: the total effect, ``softmax(fuse(z_main, z_short))``.
* OOD readout, ``nie``: the main branch alone, ``softmax(z_main)``.
* OOD readout, ``tie``: ``softmax(fuse(z_main, z_short) - fuse(c, z_short))``
  where the scalar ``c`` stands in for the counterfactual main-branch output.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._io import atomic_write
from .branches import flatten, make_branch, unflatten
from .exceptions import DimensionError, FormatError, InvalidConfigError, MissingInputError
from .numcore import RngState, SgdConfig, cross_entropy, kl_divergence, sigmoid, softmax
from .training import run_sgd
from .validation import check_features, check_index, check_targets

FUSIONS = ("sum", "gate")
DEBIAS = ("nie", "tie")
CHECKPOINT_FORMAT = "introd-teacher"
CHECKPOINT_VERSION = 1


def fuse(z_main, z_short, fusion):
    z_main = np.asarray(z_main, dtype=np.float64)
    z_short = np.asarray(z_short, dtype=np.float64)
    if z_main.shape[-1] != z_short.shape[-1]:
        raise DimensionError(f"cannot fuse logits of length {z_main.shape[-1]} and {z_short.shape[-1]}")
    if fusion == "sum":
        return z_main + z_short
    if fusion == "gate":
        return z_main * sigmoid(z_short)
    raise InvalidConfigError(f"unknown fusion {fusion!r}")


@dataclass
class TeacherOutputs:
    p_id: np.ndarray
    p_ood: np.ndarray


class CausalTeacher(ClassifierMixin, BaseEstimator):
    """Causal QA teacher trained with cross-entropy on the (biased) ID data.

    Parameters
    ----------
    fusion : {"sum", "gate"}
    debias : {"nie", "tie"}
        Which counterfactual quantity the OOD readout returns.
    hidden : int
        Width of the main branch's hidden layer.
    branch : {"dense", "slot"}
        Main-branch architecture; ``slot`` for position-preset inputs.
    shortcut : {"auto", "table", "prior"}
        ``table`` indexes a ``(T, A)`` logit table by question type; ``prior``
        is one logit vector shared by all samples.  ``auto`` picks ``table``
        when ``question_type`` is passed to ``fit``.
    shortcut_weight : float
        Weight of the auxiliary cross-entropy on the shortcut branch alone.
    prior_smoothing : float
        Pseudo-count added to every class when a ``prior`` shortcut is
        initialised from the training answer frequencies.
    learning_rate, momentum, epochs, batch_size
        Minibatch SGD settings.
    random_state : int
    """

    def __init__(
        self,
        fusion="sum",
        debias="nie",
        hidden=64,
        branch="dense",
        shortcut="auto",
        shortcut_weight=1.0,
        prior_smoothing=1.0,
        learning_rate=0.1,
        momentum=0.9,
        epochs=10,
        batch_size=128,
        random_state=0,
    ):
        self.fusion = fusion
        self.debias = debias
        self.hidden = hidden
        self.branch = branch
        self.shortcut = shortcut
        self.shortcut_weight = shortcut_weight
        self.prior_smoothing = prior_smoothing
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    # -- construction -----------------------------------------------------

    def _validate_hyperparams(self):
        if self.fusion not in FUSIONS:
            raise InvalidConfigError(f"fusion must be one of {FUSIONS}")
        if self.debias not in DEBIAS:
            raise InvalidConfigError(f"debias must be one of {DEBIAS}")
        if self.shortcut not in ("auto", "table", "prior"):
            raise InvalidConfigError("shortcut must be 'auto', 'table' or 'prior'")
        if self.shortcut_weight < 0:
            raise InvalidConfigError("shortcut_weight must be non-negative")

    def sgd_config(self):
        return SgdConfig(self.learning_rate, self.momentum, self.epochs, self.batch_size)

    def initialize(self, n_features, n_classes, n_types=None):
        """Set up freshly initialised parameters without training."""
        self._validate_hyperparams()
        kind = self.shortcut
        if kind == "auto":
            kind = "table" if n_types is not None else "prior"
        if kind == "table" and n_types is None:
            raise InvalidConfigError("a table shortcut needs the number of question types")
        rng = RngState(self.random_state)
        self.main_ = make_branch(self.branch, n_features, n_classes, self.hidden).init(rng.split(0))
        self.shortcut_kind_ = kind
        self.n_types_ = int(n_types) if kind == "table" else 1
        self.short_ = np.zeros((self.n_types_, n_classes))
        self.c_ = np.zeros(())
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = n_features
        self.loss_curve_ = []
        return self

    @property
    def params_(self):
        """All trainable arrays keyed by name (views, not copies)."""
        p = {f"main.{k}": v for k, v in self.main_.params.items()}
        p["short"] = self.short_
        p["c"] = self.c_
        return p

    def get_flat_params(self):
        return flatten(self.params_).copy()

    def set_flat_params(self, theta):
        new = unflatten(self.params_, theta)
        for k, v in self.params_.items():
            v[...] = new[k]

    def checksum(self):
        return hashlib.sha256(self.get_flat_params().tobytes()).hexdigest()

    # -- forward ----------------------------------------------------------

    def _bias_rows(self, question_type, n):
        if self.shortcut_kind_ == "prior":
            return np.zeros(n, dtype=np.int64)
        if question_type is None:
            raise InvalidConfigError("this teacher needs question_type for its shortcut branch")
        return check_index(question_type, n, self.n_types_)

    def _logits(self, X, question_type):
        check_is_fitted(self, "main_")
        X = check_features(X, self.n_features_in_)
        rows = self._bias_rows(question_type, X.shape[0])
        z_main, _ = self.main_.forward(X)
        return z_main, self.short_[rows]

    def decision_function(self, X, question_type=None):
        z_main, z_short = self._logits(X, question_type)
        return fuse(z_main, z_short, self.fusion)

    def predict_proba(self, X, question_type=None):
        """ID readout (total effect)."""
        return softmax(self.decision_function(X, question_type))

    def predict(self, X, question_type=None):
        return np.argmax(self.predict_proba(X, question_type), axis=1)

    def predict_ood_proba(self, X, question_type=None):
        """OOD readout (natural or total indirect effect)."""
        z_main, z_short = self._logits(X, question_type)
        if self.debias == "nie":
            return softmax(z_main)
        counterfactual = fuse(np.broadcast_to(self.c_, z_short.shape), z_short, self.fusion)
        return softmax(fuse(z_main, z_short, self.fusion) - counterfactual)

    def predict_ood(self, X, question_type=None):
        return np.argmax(self.predict_ood_proba(X, question_type), axis=1)

    def teacher_outputs(self, X, question_type=None):
        return TeacherOutputs(self.predict_proba(X, question_type), self.predict_ood_proba(X, question_type))

    def shortcut_proba(self, X, question_type=None):
        return softmax(self._logits(X, question_type)[1])

    # -- training ---------------------------------------------------------

    def kl_anchor(self, X, rows):
        """Detached inputs of the counterfactual-constant KL term: ``(p_id, z_short)``."""
        z_main, _ = self.main_.forward(X)
        z_short = self.short_[rows]
        return softmax(fuse(z_main, z_short, self.fusion)), z_short.copy()

    def objective(self, X, Y, rows, anchor=None):
        """Mean teacher loss over a batch and its gradient w.r.t. ``params_``.

        loss = XE(y, softmax(fused)) + shortcut_weight * XE(y, softmax(z_short))
               [+ KL(p_id, softmax(fuse(c, z_short))) for ``tie``]

        The KL term treats ``p_id`` and ``z_short`` as constants (``anchor``),
        so it trains ``c`` only.
        """
        n = X.shape[0]
        z_main, cache = self.main_.forward(X)
        z_short = self.short_[rows]
        fused = fuse(z_main, z_short, self.fusion)
        p_f = softmax(fused)
        p_s = softmax(z_short)
        lam = self.shortcut_weight
        loss = cross_entropy(Y, p_f) + lam * cross_entropy(Y, p_s)

        g_f = (p_f - Y) / n
        g_s = lam * (p_s - Y) / n
        if self.fusion == "sum":
            d_main = g_f
            d_short = g_f + g_s
        else:
            sig = sigmoid(z_short)
            d_main = g_f * sig
            d_short = g_f * z_main * sig * (1.0 - sig) + g_s

        d_c = 0.0
        if self.debias == "tie":
            p_anchor, s_anchor = anchor if anchor is not None else self.kl_anchor(X, rows)
            cf = fuse(np.broadcast_to(self.c_, s_anchor.shape), s_anchor, self.fusion)
            q = softmax(cf)
            loss = loss + kl_divergence(p_anchor, q)
            dcf = (q - p_anchor) / n
            d_c = dcf.sum() if self.fusion == "sum" else (dcf * sigmoid(s_anchor)).sum()

        grads = {f"main.{k}": v for k, v in self.main_.backward(cache, d_main).items()}
        g_table = np.zeros_like(self.short_)
        np.add.at(g_table, rows, d_short)
        grads["short"] = g_table
        grads["c"] = np.asarray(d_c, dtype=np.float64)
        return float(np.mean(loss)), grads

    def fit(self, X, y, question_type=None):
        X = check_features(X)
        Y = check_targets(y, X.shape[0])
        n_types = None
        if question_type is not None and self.shortcut != "prior":
            question_type = np.asarray(question_type)
            n_types = int(question_type.max()) + 1 if question_type.size else 1
        self.initialize(X.shape[1], Y.shape[1], n_types)
        rows = self._bias_rows(question_type, X.shape[0])
        if self.shortcut_kind_ == "prior":
            freq = (Y.sum(axis=0) + self.prior_smoothing) / (len(Y) + self.prior_smoothing * Y.shape[1])
            self.short_[0] = np.log(np.maximum(freq, 1e-12))

        def step(idx):
            return self.objective(X[idx], Y[idx], rows[idx])

        rng = RngState(self.random_state).split(1)
        self.loss_curve_ = run_sgd(self.params_, step, X.shape[0], self.sgd_config(), rng)
        return self


def save_teacher(teacher, path):
    check_is_fitted(teacher, "main_")
    header = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "fusion": teacher.fusion,
        "debias": teacher.debias,
        "hyperparams": teacher.get_params(),
        "main": teacher.main_.spec(),
        "shortcut_kind": teacher.shortcut_kind_,
        "n_types": teacher.n_types_,
        "param_shapes": {k: list(v.shape) for k, v in teacher.params_.items()},
        "loss_curve": list(teacher.loss_curve_),
    }
    payload = {"header": header, "params": [float(x) for x in teacher.get_flat_params()]}
    return atomic_write(path, json.dumps(payload, separators=(",", ":")) + "\n")


def load_teacher(path):
    if not Path(path).exists():
        raise MissingInputError(f"teacher checkpoint not found: {path}")
    try:
        payload = json.loads(Path(path).read_text())
        header = payload["header"]
        flat = payload["params"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed teacher checkpoint: {exc}") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("not a teacher checkpoint")
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(
            f"checkpoint format_version {header.get('format_version')!r} != {CHECKPOINT_VERSION}"
        )
    teacher = CausalTeacher(**header["hyperparams"])
    main = header["main"]
    n_types = header["n_types"] if header["shortcut_kind"] == "table" else None
    teacher.shortcut = header["shortcut_kind"]
    teacher.initialize(main["n_inputs"], main["n_classes"], n_types)
    teacher.shortcut = header["hyperparams"]["shortcut"]
    try:
        teacher.set_flat_params(np.array(flat, dtype=np.float64))
    except DimensionError as exc:
        raise FormatError(str(exc)) from None
    teacher.loss_curve_ = list(header.get("loss_curve", []))
    return teacher
