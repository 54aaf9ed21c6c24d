"""Introspective blending of ID and OOD knowledge and the distillation loss.

Per training sample the ID and OOD teacher readouts are scored against the
ground truth, the scores are turned into a convex weight pair ``(w_id, w_ood)``
that favours the world which fits the sample *worse*, and the target
``p_t = w_id * id_knowledge + w_ood * p_ood`` is distilled into the student
with a KL loss.

All functions are vectorised: a leading batch axis is allowed everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import DimensionError, InvalidConfigError, InvalidSampleError
from .numcore import EPS, cross_entropy, kl_divergence, softmax


class ScoreMode(str, Enum):
    PROB = "prob"
    XE = "xe"


class IdKnowledge(str, Enum):
    GT = "gt"
    ID_PRED = "id_pred"


@dataclass(frozen=True)
class WeightVariant:
    """How matching scores become blend weights.

    ``soft``          w_id = s_ood / (s_id + s_ood)
    ``hard``          w_id = 1 if s_id <= s_ood else 0
    ``fixed``         w_id = ``value``
    ``proportional``  w_id = s_id / (s_id + s_ood)
    """

    kind: str = "soft"
    value: float = None

    def __post_init__(self):
        if self.kind not in ("soft", "hard", "fixed", "proportional"):
            raise InvalidConfigError(f"unknown weight variant {self.kind!r}")
        if self.kind == "fixed":
            if self.value is None or not 0.0 <= self.value <= 1.0:
                raise InvalidConfigError("fixed weight must lie in [0, 1]")
        elif self.value is not None:
            raise InvalidConfigError(f"variant {self.kind!r} takes no value")

    @classmethod
    def parse(cls, text):
        """``"soft"``, ``"hard"``, ``"proportional"`` or ``"fixed(0.5)"``/``"fixed:0.5"``."""
        if isinstance(text, WeightVariant):
            return text
        t = str(text).strip().lower()
        for prefix in ("fixed(", "fixed:"):
            if t.startswith(prefix):
                try:
                    return cls("fixed", float(t[len(prefix) :].rstrip(")")))
                except ValueError:
                    raise InvalidConfigError(f"bad fixed weight in {text!r}") from None
        return cls(t)

    def __str__(self):
        return f"fixed({self.value:g})" if self.kind == "fixed" else self.kind


SOFT = WeightVariant("soft")
HARD = WeightVariant("hard")
PROPORTIONAL = WeightVariant("proportional")


@dataclass
class MatchScores:
    s_id: np.ndarray
    s_ood: np.ndarray
    mode: ScoreMode


@dataclass
class BlendWeights:
    w_id: np.ndarray
    w_ood: np.ndarray
    variant: WeightVariant


def match_scores(p_id, p_ood, gt_dist, mode=ScoreMode.XE):
    """How well each readout fits the ground truth.

    ``prob``: total probability on the ground-truth answer set.
    ``xe``:   inverse cross-entropy ``1 / XE(p_gt, p)``; XE is floored at ``EPS`` so a
              readout that is exactly one-hot on the answer gets a large finite score.
    """
    mode = ScoreMode(mode)
    p_id = np.asarray(p_id, dtype=np.float64)
    p_ood = np.asarray(p_ood, dtype=np.float64)
    gt = np.asarray(gt_dist, dtype=np.float64)
    if not (p_id.shape == p_ood.shape == gt.shape):
        raise DimensionError(f"shape mismatch: {p_id.shape}, {p_ood.shape}, {gt.shape}")
    support = gt > 0
    if np.any(~support.any(axis=-1)):
        raise InvalidSampleError("empty ground-truth answer set")
    if mode is ScoreMode.PROB:
        return MatchScores((p_id * support).sum(-1), (p_ood * support).sum(-1), mode)
    gt = gt / gt.sum(axis=-1, keepdims=True)
    xe_id = np.maximum(cross_entropy(gt, p_id), EPS)
    xe_ood = np.maximum(cross_entropy(gt, p_ood), EPS)
    return MatchScores(1.0 / xe_id, 1.0 / xe_ood, mode)


def weights(scores, variant=SOFT):
    variant = WeightVariant.parse(variant)
    s_id = np.asarray(scores.s_id, dtype=np.float64)
    s_ood = np.asarray(scores.s_ood, dtype=np.float64)
    if variant.kind == "soft":
        w_id = s_ood / (s_id + s_ood)
    elif variant.kind == "hard":
        w_id = np.where(s_id <= s_ood, 1.0, 0.0)
    elif variant.kind == "proportional":
        w_id = s_id / (s_id + s_ood)
    else:
        w_id = np.full(np.broadcast(s_id, s_ood).shape, float(variant.value))
    return BlendWeights(w_id, 1.0 - w_id, variant)


def blend(w, id_knowledge, p_ood):
    id_knowledge = np.asarray(id_knowledge, dtype=np.float64)
    p_ood = np.asarray(p_ood, dtype=np.float64)
    if id_knowledge.shape != p_ood.shape:
        raise DimensionError(f"cannot blend {id_knowledge.shape} with {p_ood.shape}")
    w_id = np.asarray(w.w_id, dtype=np.float64)[..., None]
    w_ood = np.asarray(w.w_ood, dtype=np.float64)[..., None]
    p_t = w_id * id_knowledge + w_ood * p_ood
    total = p_t.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > 1e-12):
        p_t = p_t / total
    return p_t


def distill_loss(p_t, student_logits):
    """``KL(p_t, softmax(z))`` and its gradient ``softmax(z) - p_t``."""
    z = np.asarray(student_logits, dtype=np.float64)
    p_s = softmax(z)
    return kl_divergence(p_t, p_s), p_s - p_t


def make_target(gt_dist, teacher_out, mode=ScoreMode.XE, variant=SOFT, src=IdKnowledge.GT, return_weights=False):
    """Compose scoring, weighting and blending into the distillation target."""
    src = IdKnowledge(src)
    gt = np.asarray(gt_dist, dtype=np.float64)
    gt = gt / gt.sum(axis=-1, keepdims=True)
    scores = match_scores(teacher_out.p_id, teacher_out.p_ood, gt, mode)
    w = weights(scores, variant)
    id_knowledge = gt if src is IdKnowledge.GT else teacher_out.p_id
    p_t = blend(w, id_knowledge, teacher_out.p_ood)
    return (p_t, w) if return_weights else p_t
