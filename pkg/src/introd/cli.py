"""Command-line entry point: ``introd <command> [--config FILE] [flags]``.

Exit codes: 0 success, 2 configuration error, 3 missing input, 4 incompatible
artifact, 1 anything else raised by the package.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ._io import atomic_write
from .biasgen import SPLITS, dataset_path, save_dataset, generate
from .exceptions import FormatError, IntroDError, InvalidConfigError, MissingInputError
from .experiment import (
    SUITES,
    Ablation,
    check_teacher_compatible,
    distill_seed,
    dump_json,
    fit_teacher,
    histogram_artifacts,
    load_config,
    load_datasets,
    metrics_path,
    readout_reports,
    run_seed,
    student_path,
    teacher_path,
    write_manifest,
    write_table,
)
from .student import save_student
from .teacher import load_teacher, save_teacher

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_INCOMPATIBLE = 0, 1, 2, 3, 4

log = logging.getLogger("introd")


def _seed_list(args):
    if args.seeds is None:
        return None if args.seed is None else [args.seed]
    if args.seeds < 1:
        raise InvalidConfigError("--seeds must be at least 1")
    start = 0 if args.seed is None else args.seed
    return list(range(start, start + args.seeds))


def _config(args):
    return load_config(args.config, preset=args.preset, output_dir=args.out, seeds=_seed_list(args))


def _summary(seed, name, report):
    return f"seed={seed} {name:<12} id={report.id_accuracy:.4f} ood={report.ood_accuracy:.4f} hm={report.hm:.4f}"


def cmd_gen(cfg, args):
    splits = SPLITS if args.split is None else (args.split,)
    for seed in cfg.seeds:
        bias = cfg.bias_for(seed)
        for split in splits:
            path = save_dataset(generate(bias, split), dataset_path(cfg.output_dir, bias, split))
            print(path)


def cmd_train_teacher(cfg, args):
    for seed in cfg.seeds:
        data = load_datasets(cfg, seed)
        teacher = fit_teacher(cfg, seed, data["train"])
        save_teacher(teacher, teacher_path(cfg, seed))
        reports = readout_reports(teacher, data)
        atomic_write(metrics_path(cfg, seed), dump_json({k: v.to_dict() for k, v in reports.items()}))
        for name, r in reports.items():
            print(_summary(seed, name, r))


def _load_teacher(cfg, seed):
    teacher = load_teacher(teacher_path(cfg, seed))
    check_teacher_compatible(cfg, seed, teacher)
    return teacher


def cmd_distill(cfg, args):
    start = time.perf_counter()
    results = []
    for seed in cfg.seeds:
        teacher = _load_teacher(cfg, seed)
        result = distill_seed(cfg, seed, teacher, load_datasets(cfg, seed))
        save_student(result.student, student_path(cfg, seed))
        atomic_write(metrics_path(cfg, seed), dump_json({k: v.to_dict() for k, v in result.reports.items()}))
        print(f"seed={seed} teacher unchanged: {result.student.teacher_checksum_ == teacher.checksum()}")
        for name, r in result.reports.items():
            print(_summary(seed, name, r))
        results.append(result)
    print(write_manifest(cfg, results, time.perf_counter() - start))


def cmd_run(cfg, args):
    start = time.perf_counter()
    results = []
    for seed in cfg.seeds:
        result = run_seed(cfg, seed, write=True)
        for name, r in result.reports.items():
            print(_summary(seed, name, r))
        results.append(result)
    print(write_manifest(cfg, results, time.perf_counter() - start))


def cmd_ablate(cfg, args):
    data = {seed: load_datasets(cfg, seed) for seed in cfg.seeds}
    teachers = {}
    for seed in cfg.seeds:
        path = teacher_path(cfg, seed)
        if path.exists():
            teachers[seed] = _load_teacher(cfg, seed)
        else:
            teachers[seed] = fit_teacher(cfg, seed, data[seed]["train"])
            save_teacher(teachers[seed], path)
    rows = Ablation(cfg, data, teachers).table(args.suite)
    for row in rows:
        if row["seed"] == "mean":
            print(f"{row['method']:<18} id={row['id_acc']:.4f} ood={row['ood_acc']:.4f} hm={row['hm']:.4f}")
    print(write_table(cfg, args.suite, rows))


def cmd_hist(cfg, args):
    root = Path(cfg.output_dir) / "hist"
    for seed in cfg.seeds:
        teacher = _load_teacher(cfg, seed)
        train = load_datasets(cfg, seed)["train"]
        hists = histogram_artifacts(cfg, seed, teacher, train)
        for kind, h in hists.items():
            stem = f"{cfg.preset}_{seed}" + ("" if kind == "biased" else f"_{kind}")
            atomic_write(root / f"{stem}.json", json.dumps(h.to_dict(), sort_keys=True, indent=2) + "\n")
            atomic_write(root / f"{stem}.csv", h.to_csv())
            lo, hi = h.modal_bin()
            print(
                f"seed={seed} {kind:<8} n={h.n} w_id<0.05: {h.fraction_below['0.05']:.4f} "
                f"w_id>0.6: {h.fraction_above['0.6']:.4f} modal bin [{lo:g}, {hi:g}]"
            )


COMMANDS = {
    "gen": (cmd_gen, "generate train/id_test/ood_test datasets"),
    "train-teacher": (cmd_train_teacher, "fit the causal teacher and score both readouts"),
    "distill": (cmd_distill, "distil the IntroD student from a saved teacher; writes the manifest"),
    "run": (cmd_run, "gen, train-teacher and distill in one go; writes the manifest"),
    "ablate": (cmd_ablate, "run one ablation suite and write its table"),
    "hist": (cmd_hist, "histogram of the soft ID weight over the training set"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file of flat key paths")
    common.add_argument("--preset", choices=("answer_prior", "position"))
    common.add_argument("--seed", type=int, help="single seed, or the first seed with --seeds")
    common.add_argument("--seeds", type=int, metavar="N", help="run N consecutive seeds")
    common.add_argument("--out", type=Path, help="output directory (overrides config and $INTROD_OUTPUT_DIR)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="introd", description="Introspective distillation on synthetic biased QA.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "gen":
            p.add_argument("--split", choices=SPLITS)
        if name == "ablate":
            p.add_argument("--suite", required=True, choices=sorted(SUITES))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command][0](cfg, args)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FormatError as exc:
        print(f"incompatible artifact: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except IntroDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
