"""Synthetic biased QA datasets.

Two presets are available:

``answer_prior``
    Each sample has a question type ``t``.  In the training split the answer is
    the type's head answer ``t mod A`` with probability ``beta`` and uniform over
    the other answers otherwise.  The OOD test split uses the same ``beta`` but
    moves the head to ``(t + 1) mod A``.  The context carries a noisy one-hot
    of the answer; a fraction ``eta`` of samples have that signal removed, so
    only the prior can resolve them.

``position``
    The context is ``S`` slots holding random token embeddings and the question
    is a noisy copy of one of them.  The answer is the slot that holds the
    question's token.  Train and ID test always place it at slot ``k``; the OOD
    test split places it uniformly over all slots.

Randomness for sample ``i`` is addressed by index in a counter-based stream, so
any subset of samples can be regenerated independently.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .exceptions import FormatError, InvalidConfigError, InvalidSampleError, MissingInputError
from .numcore import RngState

FORMAT_NAME = "introd-dataset"
FORMAT_VERSION = 1

PRESETS = ("answer_prior", "position")
SPLITS = ("train", "id_test", "ood_test")
_SPLIT_CODE = {"train": 0, "id_test": 1, "ood_test": 2}

# uniform draws per sample in the answer-prior generator
_AP_STRIDE = 4


@dataclass(frozen=True)
class BiasConfig:
    """Parameters of a synthetic dataset family.

    For the ``position`` preset ``n_answers`` is the number of slots ``S``,
    ``answer_slot`` is ``k``, and ``n_types``/``beta``/``eta`` are unused.
    """

    preset: str = "answer_prior"
    n_types: int = 8
    n_answers: int = 8
    beta: float = 0.9
    eta: float = 0.15
    noise_sigma: float = 0.5
    n_train: int = 20000
    n_id_test: int = 5000
    n_ood_test: int = 5000
    seed: int = 0
    signal: float = 0.75
    question_noise: float = 0.1
    answer_slot: int = 0
    token_dim: int = 8

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InvalidConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        for name in ("n_types", "n_answers", "n_train", "n_id_test", "n_ood_test", "token_dim"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfigError(f"{name} must be positive")
        if self.n_answers < 2:
            raise InvalidConfigError("n_answers must be at least 2")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidConfigError("beta must lie in [0, 1]")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidConfigError("eta must lie in [0, 1]")
        if self.noise_sigma < 0 or self.question_noise < 0:
            raise InvalidConfigError("noise levels must be non-negative")
        if self.preset == "answer_prior" and self.beta < 1.0 / self.n_answers - 1e-12:
            raise InvalidConfigError(
                f"beta={self.beta} is below the balanced value 1/A={1.0 / self.n_answers}"
            )
        if self.preset == "position" and not 0 <= self.answer_slot < self.n_answers:
            raise InvalidConfigError(
                f"answer_slot={self.answer_slot} must be < number of slots {self.n_answers}"
            )

    def n_samples(self, split):
        return {"train": self.n_train, "id_test": self.n_id_test, "ood_test": self.n_ood_test}[split]

    def balanced(self):
        """Same family with the answer prior flattened (``beta = 1/A``)."""
        return BiasConfig(**{**asdict(self), "beta": 1.0 / self.n_answers})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown BiasConfig keys: {sorted(unknown)}")
        return cls(**d)


def head_answer(t, n_answers):
    return np.asarray(t) % n_answers


def ood_head_answer(t, n_answers):
    return (np.asarray(t) + 1) % n_answers


def answer_prior(cfg, split):
    """The ``(T, A)`` matrix ``Prior_split(a | t)`` used by the generator."""
    T, A = cfg.n_types, cfg.n_answers
    heads = head_answer(np.arange(T), A) if split != "ood_test" else ood_head_answer(np.arange(T), A)
    prior = np.full((T, A), (1.0 - cfg.beta) / (A - 1))
    prior[np.arange(T), heads] = cfg.beta
    return prior


@dataclass
class Sample:
    question_type: int
    question_vec: np.ndarray
    context_vec: np.ndarray
    gt_answers: tuple
    gt_dist: np.ndarray

    def __post_init__(self):
        validate_gt(self.gt_answers, self.gt_dist)


def validate_gt(gt_answers, gt_dist):
    if len(gt_answers) == 0:
        raise InvalidSampleError("sample has an empty ground-truth answer set")
    gt_dist = np.asarray(gt_dist)
    support = set(np.flatnonzero(gt_dist > 0).tolist())
    if support != set(int(a) for a in gt_answers):
        raise InvalidSampleError("gt_dist must be supported exactly on gt_answers")
    if abs(gt_dist.sum() - 1.0) > 1e-9:
        raise InvalidSampleError("gt_dist must sum to 1")


@dataclass(eq=False)
class Dataset:
    """Column-oriented container; ``dataset[i]`` yields a :class:`Sample`."""

    question_type: np.ndarray
    question_vec: np.ndarray
    context_vec: np.ndarray
    gt_dist: np.ndarray
    split_tag: str
    bias_config: BiasConfig
    format_version: int = FORMAT_VERSION
    _gt_answers: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.split_tag not in SPLITS:
            raise InvalidConfigError(f"unknown split {self.split_tag!r}")
        n = len(self.question_type)
        for name in ("question_vec", "context_vec", "gt_dist"):
            if getattr(self, name).shape[0] != n:
                raise InvalidConfigError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if self.gt_dist.shape[1] != self.bias_config.n_answers:
            raise InvalidConfigError("gt_dist width does not match n_answers")
        if self._gt_answers is None:
            self._gt_answers = [tuple(np.flatnonzero(row > 0).tolist()) for row in self.gt_dist]

    def __len__(self):
        return len(self.question_type)

    def __getitem__(self, i):
        return Sample(
            int(self.question_type[i]),
            self.question_vec[i],
            self.context_vec[i],
            self._gt_answers[i],
            self.gt_dist[i],
        )

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]

    @property
    def gt_answers(self):
        return list(self._gt_answers)

    @property
    def X(self):
        """Model input: question features followed by context features."""
        return np.hstack([self.question_vec, self.context_vec])

    @property
    def gt_mask(self):
        return self.gt_dist > 0

    @property
    def labels(self):
        """First ground-truth answer of each sample (the label for single-answer data)."""
        return np.argmax(self.gt_dist > 0, axis=1)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.split_tag == other.split_tag
            and self.bias_config == other.bias_config
            and self.format_version == other.format_version
            and all(
                _bytes_equal(getattr(self, n), getattr(other, n))
                for n in ("question_type", "question_vec", "context_vec", "gt_dist")
            )
        )


def _bytes_equal(a, b):
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def _check_split(split):
    if split not in SPLITS:
        raise InvalidConfigError(f"split must be one of {SPLITS}, got {split!r}")


def gen_answer_prior(cfg, split, rng=None):
    if cfg.preset != "answer_prior":
        raise InvalidConfigError("gen_answer_prior requires preset='answer_prior'")
    _check_split(split)
    rng = RngState(cfg.seed) if rng is None else rng
    stream = rng.split(_SPLIT_CODE[split])
    uni, qnoise, cnoise = stream.split(0), stream.split(1), stream.split(2)

    n, T, A = cfg.n_samples(split), cfg.n_types, cfg.n_answers
    idx = np.arange(n, dtype=np.uint64)
    base = idx[:, None] * np.uint64(_AP_STRIDE) + np.arange(_AP_STRIDE, dtype=np.uint64)
    u = uni.uniform_at(base)

    t = np.minimum((u[:, 0] * T).astype(np.int64), T - 1)
    heads = ood_head_answer(t, A) if split == "ood_test" else head_answer(t, A)
    other = np.minimum((u[:, 2] * (A - 1)).astype(np.int64), A - 2)
    # skip over the head when indexing the non-head answers
    other = other + (other >= heads)
    a = np.where(u[:, 1] < cfg.beta, heads, other)
    ambiguous = u[:, 3] < cfg.eta

    qn = qnoise.normal_at(idx[:, None] * np.uint64(T) + np.arange(T, dtype=np.uint64))
    cn = cnoise.normal_at(idx[:, None] * np.uint64(A) + np.arange(A, dtype=np.uint64))
    question_vec = np.eye(T)[t] + cfg.question_noise * qn
    signal = np.where(ambiguous, 0.0, cfg.signal)[:, None]
    context_vec = signal * np.eye(A)[a] + cfg.noise_sigma * cn
    gt_dist = np.eye(A)[a]
    return Dataset(t, question_vec, context_vec, gt_dist, split, cfg)


def gen_position(cfg, split, rng=None):
    if cfg.preset != "position":
        raise InvalidConfigError("gen_position requires preset='position'")
    _check_split(split)
    rng = RngState(cfg.seed) if rng is None else rng
    stream = rng.split(_SPLIT_CODE[split])
    uni, tok, qnoise = stream.split(0), stream.split(1), stream.split(2)

    n, S, d = cfg.n_samples(split), cfg.n_answers, cfg.token_dim
    idx = np.arange(n, dtype=np.uint64)
    if split == "ood_test":
        slot = np.minimum((uni.uniform_at(idx) * S).astype(np.int64), S - 1)
    else:
        slot = np.full(n, cfg.answer_slot, dtype=np.int64)
    tokens = tok.normal_at(idx[:, None] * np.uint64(S * d) + np.arange(S * d, dtype=np.uint64))
    tokens = tokens.reshape(n, S, d)
    qn = qnoise.normal_at(idx[:, None] * np.uint64(d) + np.arange(d, dtype=np.uint64))
    question_vec = tokens[np.arange(n), slot] + cfg.noise_sigma * qn
    gt_dist = np.eye(S)[slot]
    return Dataset(np.zeros(n, dtype=np.int64), question_vec, tokens.reshape(n, S * d), gt_dist, split, cfg)


def generate(cfg, split, rng=None):
    """Dispatch on ``cfg.preset``."""
    if cfg.preset == "answer_prior":
        return gen_answer_prior(cfg, split, rng)
    return gen_position(cfg, split, rng)


def dataset_path(root, cfg, split):
    return Path(root) / "data" / f"{cfg.preset}_{cfg.seed}_{split}.ds"


def _floats(a):
    return [float(x) for x in a]


def serialize(d):
    """Canonical line-delimited JSON encoding (header line, then one line per sample)."""
    buf = io.StringIO()
    header = {
        "format": FORMAT_NAME,
        "format_version": d.format_version,
        "split": d.split_tag,
        "bias_config": d.bias_config.to_dict(),
        "n_samples": len(d),
    }
    buf.write(json.dumps(header, separators=(",", ":")) + "\n")
    for i in range(len(d)):
        rec = {
            "question_type": int(d.question_type[i]),
            "question_vec": _floats(d.question_vec[i]),
            "context_vec": _floats(d.context_vec[i]),
            "gt_answers": list(d._gt_answers[i]),
            "gt_dist": _floats(d.gt_dist[i]),
        }
        buf.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return buf.getvalue().encode("utf-8")


def checksum(d):
    return hashlib.sha256(serialize(d)).hexdigest()


def save_dataset(d, path):
    return atomic_write(path, serialize(d))


def load_dataset(path):
    if not Path(path).exists():
        raise MissingInputError(f"dataset not found: {path}")
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if not raw.endswith(b"\n"):
        raise FormatError("file is truncated (no trailing newline)", offset=len(lines))
    lines = lines[:-1]
    if not lines:
        raise FormatError("empty dataset file", offset=1)
    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise FormatError(f"malformed header: {exc}", offset=1) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise FormatError("not a dataset file", offset=1)
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported format_version {header.get('format_version')!r}, expected {FORMAT_VERSION}",
            offset=1,
        )
    try:
        cfg = BiasConfig.from_dict(header["bias_config"])
        n = int(header["n_samples"])
        split = header["split"]
    except (KeyError, TypeError, InvalidConfigError) as exc:
        raise FormatError(f"bad header: {exc}", offset=1) from None
    if len(lines) - 1 != n:
        raise FormatError(f"expected {n} records, found {len(lines) - 1}", offset=len(lines) + 1)

    qt, qv, cv, gd, ga = [], [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            qt.append(int(rec["question_type"]))
            qv.append(rec["question_vec"])
            cv.append(rec["context_vec"])
            gd.append(rec["gt_dist"])
            ga.append(tuple(int(a) for a in rec["gt_answers"]))
            validate_gt(ga[-1], gd[-1])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed record: {exc}", offset=lineno) from None
    try:
        return Dataset(
            np.array(qt, dtype=np.int64),
            np.array(qv, dtype=np.float64).reshape(n, -1),
            np.array(cv, dtype=np.float64).reshape(n, -1),
            np.array(gd, dtype=np.float64).reshape(n, -1),
            split,
            cfg,
            FORMAT_VERSION,
            ga,
        )
    except (ValueError, InvalidConfigError) as exc:
        raise FormatError(f"inconsistent records: {exc}") from None
