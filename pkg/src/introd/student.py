"""Student networks: a plain baseline and the introspective-distillation student."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._io import atomic_write
from .branches import flatten, make_branch, unflatten
from .exceptions import DimensionError, FormatError, IntroDError, MissingInputError
from .introspection import IdKnowledge, ScoreMode, WeightVariant, distill_loss, make_target
from .numcore import RngState, SgdConfig, softmax
from .training import run_sgd
from .validation import check_features, check_targets

CHECKPOINT_FORMAT = "introd-student"
CHECKPOINT_VERSION = 1

# keeps student initialisation independent of a teacher built from the same seed
_STUDENT_STREAM = 7


class StudentClassifier(ClassifierMixin, BaseEstimator):
    """Main-branch network fitted to (soft) targets by minimising KL(target, p_s).

    With one-hot targets this is ordinary cross-entropy training, i.e. the
    non-debiased baseline.
    """

    def __init__(
        self,
        hidden=64,
        branch="dense",
        learning_rate=0.1,
        momentum=0.9,
        epochs=10,
        batch_size=128,
        random_state=0,
    ):
        self.hidden = hidden
        self.branch = branch
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def sgd_config(self):
        return SgdConfig(self.learning_rate, self.momentum, self.epochs, self.batch_size)

    def initialize(self, n_features, n_classes):
        rng = RngState(self.random_state).split(_STUDENT_STREAM)
        self.net_ = make_branch(self.branch, n_features, n_classes, self.hidden).init(rng.split(0))
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = n_features
        self.loss_curve_ = []
        return self

    def objective(self, X, P):
        z, cache = self.net_.forward(X)
        loss, dz = distill_loss(P, z)
        return float(np.mean(loss)), self.net_.backward(cache, dz / X.shape[0])

    def _fit_targets(self, X, P):
        self.initialize(X.shape[1], P.shape[1])
        rng = RngState(self.random_state).split(_STUDENT_STREAM, 1)
        self.loss_curve_ = run_sgd(
            self.net_.params, lambda idx: self.objective(X[idx], P[idx]), X.shape[0], self.sgd_config(), rng
        )
        return self

    def fit(self, X, y):
        X = check_features(X)
        return self._fit_targets(X, check_targets(y, X.shape[0]))

    def decision_function(self, X, question_type=None):
        check_is_fitted(self, "net_")
        return self.net_.forward(check_features(X, self.n_features_in_))[0]

    def predict_proba(self, X, question_type=None):
        # question_type is accepted so students and teachers share one call signature
        return softmax(self.decision_function(X))

    def predict(self, X, question_type=None):
        return np.argmax(self.decision_function(X), axis=1)

    def get_flat_params(self):
        check_is_fitted(self, "net_")
        return flatten(self.net_.params).copy()


class IntroDStudent(StudentClassifier):
    """Student distilled from a frozen causal teacher's blended knowledge.

    Parameters
    ----------
    teacher : fitted CausalTeacher
    mode : {"xe", "prob"}
        Matching score used to introspect each training sample.
    variant : str or WeightVariant
        ``"soft"``, ``"hard"``, ``"proportional"`` or ``"fixed(w)"``.
    id_knowledge : {"gt", "id_pred"}
        Ground-truth labels or the teacher's ID readout as the ID knowledge.
    """

    def __init__(
        self,
        teacher=None,
        mode="xe",
        variant="soft",
        id_knowledge="gt",
        hidden=64,
        branch="dense",
        learning_rate=0.1,
        momentum=0.9,
        epochs=10,
        batch_size=128,
        random_state=0,
    ):
        super().__init__(hidden, branch, learning_rate, momentum, epochs, batch_size, random_state)
        self.teacher = teacher
        self.mode = mode
        self.variant = variant
        self.id_knowledge = id_knowledge

    def blended_targets(self, X, y, question_type=None):
        """Targets and blend weights the student is trained on."""
        X = check_features(X)
        check_is_fitted(self.teacher, "main_")
        Y = check_targets(y, X.shape[0], len(self.teacher.classes_))
        out = self.teacher.teacher_outputs(X, question_type)
        return make_target(
            Y,
            out,
            ScoreMode(self.mode),
            WeightVariant.parse(self.variant),
            IdKnowledge(self.id_knowledge),
            return_weights=True,
        )

    def fit(self, X, y, question_type=None):
        if self.teacher is None:
            raise IntroDError("IntroDStudent needs a fitted teacher")
        X = check_features(X)
        before = self.teacher.checksum()
        targets, w = self.blended_targets(X, y, question_type)
        self.w_id_ = w.w_id
        self._fit_targets(X, targets)
        if self.teacher.checksum() != before:
            raise IntroDError("teacher parameters changed during distillation")
        self.teacher_checksum_ = before
        return self


def save_student(student, path):
    """Write a fitted student as JSON.  The teacher itself is not embedded."""
    check_is_fitted(student, "net_")
    params = {k: v for k, v in student.get_params().items() if k != "teacher"}
    header = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "hyperparams": params,
        "net": student.net_.spec(),
        "teacher_checksum": getattr(student, "teacher_checksum_", None),
        "loss_curve": list(student.loss_curve_),
    }
    payload = {"header": header, "params": [float(x) for x in student.get_flat_params()]}
    return atomic_write(path, json.dumps(payload, separators=(",", ":")) + "\n")


def load_student(path):
    """Restore a student as a plain ``StudentClassifier`` ready for prediction."""
    if not Path(path).exists():
        raise MissingInputError(f"student checkpoint not found: {path}")
    try:
        payload = json.loads(Path(path).read_text())
        header, flat = payload["header"], payload["params"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed student checkpoint: {exc}") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("not a student checkpoint")
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint format_version {header.get('format_version')!r} != {CHECKPOINT_VERSION}")
    known = StudentClassifier().get_params()
    student = StudentClassifier(**{k: v for k, v in header["hyperparams"].items() if k in known})
    net = header["net"]
    student.initialize(net["n_inputs"], net["n_classes"])
    try:
        student.net_.params.update(unflatten(student.net_.params, np.array(flat, dtype=np.float64)))
    except DimensionError as exc:
        raise FormatError(str(exc)) from None
    student.loss_curve_ = list(header.get("loss_curve", []))
    student.teacher_checksum_ = header.get("teacher_checksum")
    return student
