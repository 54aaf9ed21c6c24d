"""Experiment configuration and the end-to-end pipeline.

A run is described by one :class:`ExperimentConfig`.  On disk it is a TOML
file of flat key paths (``bias.beta = 0.9``, ``sgd_student.epochs = 10``) laid
over the defaults of a named preset; unknown keys are rejected before any
work starts.  Every artifact lives under ``output_dir``::

    data/<preset>_<seed>_<split>.ds     datasets
    teachers/<preset>_<seed>.json       teacher checkpoints
    students/<preset>_<seed>.json       student checkpoints
    metrics/<preset>_<seed>.json        per-seed metric reports
    hist/<preset>_<seed>.{json,csv}     w_id histograms
    tables/<suite>.{json,csv}           ablation tables
    manifest.json                       run manifest (timing.json beside it)
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from ._io import atomic_write
from .biasgen import SPLITS, BiasConfig, checksum, dataset_path, generate, load_dataset, save_dataset
from .evaluation import MetricsReport, ensemble_eval, evaluate, weight_histogram
from .exceptions import FormatError, InvalidConfigError
from .introspection import IdKnowledge, ScoreMode, WeightVariant
from .numcore import SgdConfig
from .student import IntroDStudent, StudentClassifier, save_student
from .teacher import CausalTeacher, load_teacher, save_teacher

ENV_OUTPUT_DIR = "INTROD_OUTPUT_DIR"


@dataclass(frozen=True)
class TeacherSettings:
    fusion: str = "gate"
    debias: str = "tie"
    shortcut_weight: float = 1.0
    hidden: int = 64
    branch: str = "dense"
    prior_smoothing: float = 1.0

    def __post_init__(self):
        if self.fusion not in ("sum", "gate"):
            raise InvalidConfigError("fusion must be 'sum' or 'gate'")
        if self.debias not in ("nie", "tie"):
            raise InvalidConfigError("debias must be 'nie' or 'tie'")
        if self.branch not in ("dense", "slot"):
            raise InvalidConfigError("branch must be 'dense' or 'slot'")
        if self.hidden < 1:
            raise InvalidConfigError("hidden must be positive")
        if self.shortcut_weight < 0:
            raise InvalidConfigError("shortcut_weight must be non-negative")
        if self.prior_smoothing < 0:
            raise InvalidConfigError("prior_smoothing must be non-negative")


@dataclass(frozen=True)
class IntroDSettings:
    mode: str = "xe"
    variant: str = "soft"
    id_knowledge: str = "gt"

    def __post_init__(self):
        try:
            ScoreMode(self.mode)
            IdKnowledge(self.id_knowledge)
        except ValueError as exc:
            raise InvalidConfigError(str(exc)) from None
        WeightVariant.parse(self.variant)


@dataclass(frozen=True)
class HistSettings:
    bins: int = 20
    balanced_reference: bool = True

    def __post_init__(self):
        if self.bins < 1:
            raise InvalidConfigError("bins must be positive")


_SECTIONS = {
    "bias": BiasConfig,
    "teacher": TeacherSettings,
    "introd": IntroDSettings,
    "sgd_teacher": SgdConfig,
    "sgd_student": SgdConfig,
    "hist": HistSettings,
}
# the dataset seed always comes from the run's seed list
_HIDDEN_KEYS = {"bias.seed"}


@dataclass(frozen=True)
class ExperimentConfig:
    bias: BiasConfig = field(default_factory=BiasConfig)
    teacher: TeacherSettings = field(default_factory=TeacherSettings)
    introd: IntroDSettings = field(default_factory=IntroDSettings)
    sgd_teacher: SgdConfig = field(default_factory=lambda: SgdConfig(0.05, 0.9, 10, 128))
    sgd_student: SgdConfig = field(default_factory=lambda: SgdConfig(0.05, 0.9, 10, 128))
    hist: HistSettings = field(default_factory=HistSettings)
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: str = "runs"

    def __post_init__(self):
        seeds = tuple(self.seeds)
        if not seeds or any(isinstance(s, bool) or not isinstance(s, (int, np.integer)) or s < 0 for s in seeds):
            raise InvalidConfigError("seeds: expected a non-empty list of non-negative integers")
        if len(set(seeds)) != len(seeds):
            raise InvalidConfigError("seeds: duplicates are not allowed")
        object.__setattr__(self, "seeds", tuple(int(s) for s in seeds))

    @property
    def preset(self):
        return self.bias.preset

    def flat(self):
        """The config as ``{"section.key": value}`` plus ``seeds`` and ``output_dir``."""
        out = {}
        for section in _SECTIONS:
            for k, v in asdict(getattr(self, section)).items():
                if f"{section}.{k}" not in _HIDDEN_KEYS:
                    out[f"{section}.{k}"] = v
        out["seeds"] = list(self.seeds)
        out["output_dir"] = self.output_dir
        return out

    def config_hash(self):
        """Short digest of everything that affects results (``output_dir`` excluded)."""
        flat = self.flat()
        del flat["output_dir"]
        return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()[:16]

    def bias_for(self, seed):
        return replace(self.bias, seed=int(seed))

    def with_seeds(self, seeds):
        return replace(self, seeds=tuple(seeds))

    def with_output_dir(self, path):
        return replace(self, output_dir=str(path))

    @classmethod
    def from_flat(cls, flat):
        flat = dict(flat)
        unknown = sorted(set(flat) - set(schema()))
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {', '.join(unknown)}")
        base = schema()
        for key, value in flat.items():
            _check_type(key, value, base[key])
        merged = {**base, **flat}
        kwargs = {}
        for section, klass in _SECTIONS.items():
            values = {k.split(".", 1)[1]: v for k, v in merged.items() if k.startswith(section + ".")}
            try:
                kwargs[section] = klass(**values)
            except (InvalidConfigError, ValueError) as exc:
                raise InvalidConfigError(f"{section}: {exc}") from None
        return cls(seeds=tuple(merged["seeds"]), output_dir=str(merged["output_dir"]), **kwargs)


def schema():
    """Every accepted flat key with its default value."""
    return ExperimentConfig().flat()


def _check_type(key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, (list, tuple))
    if not ok:
        raise InvalidConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")


PRESETS = {
    "answer_prior": {},
    "position": {
        "bias.preset": "position",
        "bias.n_types": 1,
        "bias.noise_sigma": 1.25,
        "teacher.fusion": "sum",
        "teacher.debias": "nie",
        "teacher.branch": "slot",
        "teacher.hidden": 16,
        "teacher.prior_smoothing": 500.0,
        "sgd_teacher.epochs": 20,
        "hist.balanced_reference": False,
    },
}


def preset_config(name="answer_prior"):
    if name not in PRESETS:
        raise InvalidConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return ExperimentConfig.from_flat(PRESETS[name])


def _flatten(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path=None, preset=None, output_dir=None, seeds=None):
    """Build a config from preset defaults, an optional TOML file and overrides.

    Precedence for ``output_dir``: argument, then ``$INTROD_OUTPUT_DIR``, then
    the file, then the default.
    """
    flat = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                flat = _flatten(tomli.load(fh))
        except FileNotFoundError:
            raise InvalidConfigError(f"config file not found: {path}") from None
        except tomli.TOMLDecodeError as exc:
            raise InvalidConfigError(f"{path}: {exc}") from None
    file_preset = flat.get("bias.preset")
    name = preset or file_preset or "answer_prior"
    if preset and file_preset and preset != file_preset:
        raise InvalidConfigError(f"--preset {preset} contradicts bias.preset = {file_preset!r} in {path}")
    if name not in PRESETS:
        raise InvalidConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    cfg = ExperimentConfig.from_flat({**PRESETS[name], **flat})
    env_dir = os.environ.get(ENV_OUTPUT_DIR)
    if output_dir is not None:
        cfg = cfg.with_output_dir(output_dir)
    elif env_dir:
        cfg = cfg.with_output_dir(env_dir)
    if seeds is not None:
        cfg = cfg.with_seeds(seeds)
    return cfg


def dump_config(cfg):
    """TOML text of ``cfg`` (flat key paths) that :func:`load_config` reads back."""
    lines = []
    for key, value in cfg.flat().items():
        if key == "seeds":
            lines.append(f"seeds = [{', '.join(str(s) for s in value)}]")
        else:
            lines.append(f'"{key}" = {_toml_value(value)}' if "." in key else f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- paths -----------------------------------------------------------------

def teacher_path(cfg, seed):
    return Path(cfg.output_dir) / "teachers" / f"{cfg.preset}_{seed}.json"


def student_path(cfg, seed):
    return Path(cfg.output_dir) / "students" / f"{cfg.preset}_{seed}.json"


def metrics_path(cfg, seed):
    return Path(cfg.output_dir) / "metrics" / f"{cfg.preset}_{seed}.json"


def manifest_path(cfg):
    return Path(cfg.output_dir) / "manifest.json"


def dump_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# -- pipeline steps ----------------------------------------------------------

def generate_datasets(cfg, seed, write=True):
    bias = cfg.bias_for(seed)
    data = {split: generate(bias, split) for split in SPLITS}
    if write:
        for split, d in data.items():
            save_dataset(d, dataset_path(cfg.output_dir, bias, split))
    return data


def load_datasets(cfg, seed):
    """Read the three splits of ``seed``; each must match the configured bias family."""
    bias = cfg.bias_for(seed)
    data = {}
    for split in SPLITS:
        d = load_dataset(dataset_path(cfg.output_dir, bias, split))
        if d.bias_config != bias:
            raise FormatError(f"{split} dataset was generated with a different bias config")
        data[split] = d
    return data


def make_teacher(cfg, seed):
    t, sgd = cfg.teacher, cfg.sgd_teacher
    return CausalTeacher(
        fusion=t.fusion,
        debias=t.debias,
        hidden=t.hidden,
        branch=t.branch,
        shortcut="table" if cfg.preset == "answer_prior" else "prior",
        shortcut_weight=t.shortcut_weight,
        prior_smoothing=t.prior_smoothing,
        learning_rate=sgd.learning_rate,
        momentum=sgd.momentum,
        epochs=sgd.epochs,
        batch_size=sgd.batch_size,
        random_state=seed,
    )


def _student_kwargs(cfg, seed):
    sgd = cfg.sgd_student
    return dict(
        hidden=cfg.teacher.hidden,
        branch=cfg.teacher.branch,
        learning_rate=sgd.learning_rate,
        momentum=sgd.momentum,
        epochs=sgd.epochs,
        batch_size=sgd.batch_size,
        random_state=seed,
    )


def make_student(cfg, seed, teacher, **overrides):
    """IntroD student for ``seed``; ``overrides`` replace the configured introspection settings."""
    settings = {**asdict(cfg.introd), **overrides}
    return IntroDStudent(teacher, **settings, **_student_kwargs(cfg, seed))


def make_baseline(cfg, seed):
    """Non-debiased student: the same network trained on the labels alone."""
    return StudentClassifier(**_student_kwargs(cfg, seed))


def fit_teacher(cfg, seed, train):
    return make_teacher(cfg, seed).fit(train.X, train.gt_dist, train.question_type)


def check_teacher_compatible(cfg, seed, teacher):
    """Raise FormatError when a loaded checkpoint was trained under different settings."""
    expected = make_teacher(cfg, seed).get_params()
    got = teacher.get_params()
    diff = sorted(k for k in expected if expected[k] != got.get(k))
    if diff:
        raise FormatError(f"teacher checkpoint does not match the config ({', '.join(diff)})")


def readout_reports(teacher, data):
    return {
        "id_readout": evaluate(teacher.predict_proba, data["id_test"], data["ood_test"]),
        "ood_readout": evaluate(teacher.predict_ood_proba, data["id_test"], data["ood_test"]),
    }


def fit_student(cfg, seed, teacher, train, **overrides):
    student = make_student(cfg, seed, teacher, **overrides)
    return student.fit(train.X, train.gt_dist, train.question_type)


def histogram_artifacts(cfg, seed, teacher, train, balanced=None):
    """``w_id`` histogram on the training split and, optionally, on a balanced twin.

    The balanced twin is the same family with ``beta = 1/A``, generated in
    memory and scored by a teacher fitted to it.
    """
    out = {"biased": weight_histogram(teacher, train, ScoreMode(cfg.introd.mode), cfg.hist.bins)}
    if balanced is None:
        balanced = cfg.hist.balanced_reference and cfg.preset == "answer_prior"
    if balanced:
        btrain = generate(cfg.bias_for(seed).balanced(), "train")
        bteacher = make_teacher(cfg, seed).fit(btrain.X, btrain.gt_dist, btrain.question_type)
        out["balanced"] = weight_histogram(bteacher, btrain, ScoreMode(cfg.introd.mode), cfg.hist.bins)
    return out


@dataclass
class SeedResult:
    seed: int
    teacher: CausalTeacher
    student: IntroDStudent
    reports: dict
    histogram: object
    dataset_checksums: dict

    def manifest_entry(self):
        return {
            "dataset_checksums": self.dataset_checksums,
            "teacher_checksum": self.teacher.checksum(),
            "student_checksum": hashlib.sha256(self.student.get_flat_params().tobytes()).hexdigest(),
            "teacher_unchanged": self.student.teacher_checksum_ == self.teacher.checksum(),
            "metrics": {k: v.to_dict() for k, v in self.reports.items()},
            "w_id_histogram": self.histogram.to_dict(),
        }


def distill_seed(cfg, seed, teacher, data):
    """Distil a student from a fitted teacher and evaluate all three predictors."""
    student = fit_student(cfg, seed, teacher, data["train"])
    reports = readout_reports(teacher, data)
    reports["student"] = evaluate(student.predict_proba, data["id_test"], data["ood_test"])
    hist = weight_histogram(teacher, data["train"], ScoreMode(cfg.introd.mode), cfg.hist.bins)
    sums = {split: checksum(d) for split, d in data.items()}
    return SeedResult(seed, teacher, student, reports, hist, sums)


def run_seed(cfg, seed, data=None, write=False):
    """Full pipeline for one seed: data, teacher, student, evaluation."""
    if data is None:
        data = generate_datasets(cfg, seed, write=write)
    teacher = fit_teacher(cfg, seed, data["train"])
    if write:
        save_teacher(teacher, teacher_path(cfg, seed))
    result = distill_seed(cfg, seed, teacher, data)
    if write:
        save_student(result.student, student_path(cfg, seed))
        atomic_write(metrics_path(cfg, seed), dump_json({k: v.to_dict() for k, v in result.reports.items()}))
    return result


def build_manifest(cfg, results):
    """Deterministic run record: no timestamps, keys sorted, floats in repr form."""
    flat = cfg.flat()
    del flat["output_dir"]
    return {
        "tool": "introd",
        "version": __version__,
        "config": flat,
        "config_hash": cfg.config_hash(),
        "seeds": [r.seed for r in results],
        "runs": {str(r.seed): r.manifest_entry() for r in results},
    }


def write_manifest(cfg, results, wall_clock=None):
    path = atomic_write(manifest_path(cfg), dump_json(build_manifest(cfg, results)))
    if wall_clock is not None:
        # kept beside the manifest so the manifest itself stays reproducible
        atomic_write(path.with_name("timing.json"), dump_json({"wall_clock_seconds": wall_clock}))
    return path


# -- ablations ---------------------------------------------------------------

ENSEMBLE_GRID = tuple(round(0.1 * i, 1) for i in range(11))

# suite -> [(method, introd overrides)]; every suite also reports both teacher readouts
SUITES = {
    "q1": [("introd", {}), ("prob", {"mode": "prob"})],
    "q2": [("introd", {}), ("weight_avg", {"variant": "proportional"})],
    "q3": [("introd", {}), ("simple_avg", {"variant": "fixed(0.5)"})],
    "q4": [("introd", {}), ("cfd", {"variant": "fixed(0)"})],
    "q5": [("soft", {"variant": "soft"}), ("hard", {"variant": "hard"})],
    "q6": [("gt", {"id_knowledge": "gt"}), ("id_pred", {"id_knowledge": "id_pred"})],
    "q7": [("introd", {})],
}
TABLE_COLUMNS = ("suite", "method", "seed", "id_acc", "ood_acc", "hm", "seeds", "config_hash")


class Ablation:
    """Shares datasets, teachers and fitted students across suites of one config."""

    def __init__(self, cfg, data_by_seed, teachers):
        self.cfg = cfg
        self.data = data_by_seed
        self.teachers = teachers
        self._cache = {}

    def student_report(self, seed, **overrides):
        settings = {**asdict(self.cfg.introd), **overrides}
        key = (seed, tuple(sorted((k, str(v)) for k, v in settings.items())))
        if key not in self._cache:
            data = self.data[seed]
            student = fit_student(self.cfg, seed, self.teachers[seed], data["train"], **overrides)
            self._cache[key] = evaluate(student.predict_proba, data["id_test"], data["ood_test"])
        return self._cache[key]

    def teacher_reports(self, seed):
        key = (seed, "teacher")
        if key not in self._cache:
            self._cache[key] = readout_reports(self.teachers[seed], self.data[seed])
        return self._cache[key]

    def ensemble_reports(self, seed, grid=ENSEMBLE_GRID):
        key = (seed, "ensemble", tuple(grid))
        if key not in self._cache:
            d = self.data[seed]
            self._cache[key] = ensemble_eval(self.teachers[seed], grid, d["id_test"], d["ood_test"])
        return self._cache[key]

    def per_seed(self, suite):
        """``{method: {seed: MetricsReport}}`` for one suite."""
        if suite not in SUITES:
            raise InvalidConfigError(f"unknown suite {suite!r}; expected one of {sorted(SUITES)}")
        out = {"id_teacher": {}, "ood_teacher": {}}
        for seed in self.cfg.seeds:
            tr = self.teacher_reports(seed)
            out["id_teacher"][seed] = tr["id_readout"]
            out["ood_teacher"][seed] = tr["ood_readout"]
            if suite == "q7":
                for w, report in self.ensemble_reports(seed):
                    out.setdefault(f"ensemble(w_id={w:g})", {})[seed] = report
            for method, overrides in SUITES[suite]:
                out.setdefault(method, {})[seed] = self.student_report(seed, **overrides)
        return out

    def table(self, suite):
        """Rows per method and seed, plus a ``mean`` row whose HM uses the mean accuracies."""
        seeds = list(self.cfg.seeds)
        chash = self.cfg.config_hash()
        rows = []
        for method, by_seed in self.per_seed(suite).items():
            for seed, r in by_seed.items():
                rows.append(_row(suite, method, seed, r.id_accuracy, r.ood_accuracy, seeds, chash))
            id_mean = float(np.mean([r.id_accuracy for r in by_seed.values()]))
            ood_mean = float(np.mean([r.ood_accuracy for r in by_seed.values()]))
            rows.append(_row(suite, method, "mean", id_mean, ood_mean, seeds, chash))
        return rows


def _row(suite, method, seed, id_acc, ood_acc, seeds, chash):
    r = MetricsReport.from_accuracies(id_acc, ood_acc)
    return {
        "suite": suite,
        "method": method,
        "seed": seed,
        "id_acc": r.id_accuracy,
        "ood_acc": r.ood_accuracy,
        "hm": r.hm,
        "seeds": " ".join(str(s) for s in seeds),
        "config_hash": chash,
    }


def table_to_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def write_table(cfg, suite, rows):
    root = Path(cfg.output_dir) / "tables"
    atomic_write(root / f"{suite}.json", dump_json(rows))
    return atomic_write(root / f"{suite}.csv", table_to_csv(rows))
