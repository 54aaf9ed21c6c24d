import hashlib
import json

import pytest

from introd.biasgen import load_dataset
from introd.cli import main
from introd.evaluation import harmonic_mean

TINY_TOML = """\
[bias]
n_train = 300
n_id_test = 120
n_ood_test = 120
[teacher]
hidden = 8
[sgd_teacher]
epochs = 1
[sgd_student]
epochs = 1
"""


@pytest.fixture
def conf(tmp_path, monkeypatch):
    monkeypatch.delenv("INTROD_OUTPUT_DIR", raising=False)
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def digest(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*.ds"))}


def test_gen_deterministic(conf, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("gen", "--config", conf, "--seed", 3, "--out", a) == 0
    assert run("gen", "--config", conf, "--seed", 3, "--out", b) == 0
    assert digest(a) == digest(b) and len(digest(a)) == 3


def test_gen_single_split(conf, tmp_path):
    assert run("gen", "--config", conf, "--seed", 0, "--split", "ood_test", "--out", tmp_path / "o") == 0
    assert [p.name for p in (tmp_path / "o" / "data").iterdir()] == ["answer_prior_0_ood_test.ds"]


def test_default_gen_writes_30k_samples(tmp_path):
    assert run("gen", "--seed", 0, "--out", tmp_path) == 0
    total = sum(len(load_dataset(p)) for p in (tmp_path / "data").iterdir())
    assert total == 30000


def test_invalid_beta_fails_before_writing(tmp_path, capsys):
    conf = tmp_path / "bad.toml"
    conf.write_text("[bias]\nbeta = 0.05\n")
    out = tmp_path / "out"
    assert run("gen", "--config", conf, "--out", out) == 2
    assert not out.exists()
    assert "beta" in capsys.readouterr().err


def test_unknown_key_and_suite(conf, tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[teacher]\ndepth = 3\n")
    assert run("gen", "--config", bad, "--out", tmp_path) == 2
    assert "teacher.depth" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        run("ablate", "--suite", "q9", "--config", conf)
    assert info.value.code == 2


def test_missing_inputs_exit_3(conf, tmp_path):
    assert run("train-teacher", "--config", conf, "--seed", 0, "--out", tmp_path) == 3
    assert run("gen", "--config", conf, "--seed", 0, "--out", tmp_path) == 0
    assert run("distill", "--config", conf, "--seed", 0, "--out", tmp_path) == 3
    assert run("hist", "--config", conf, "--seed", 0, "--out", tmp_path) == 3


def test_full_pipeline_and_incompatible_checkpoint(conf, tmp_path, capsys):
    out = tmp_path / "run"
    for cmd in ("gen", "train-teacher", "distill"):
        assert run(cmd, "--config", conf, "--seed", 0, "--out", out) == 0
    assert "teacher unchanged: True" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [0]
    assert "wall_clock_seconds" in json.loads((out / "timing.json").read_text())
    for r in manifest["runs"]["0"]["metrics"].values():
        assert abs(r["hm"] - harmonic_mean(r["id_accuracy"], r["ood_accuracy"])) <= 1e-12

    assert run("hist", "--config", conf, "--seed", 0, "--out", out) == 0
    h = json.loads((out / "hist" / "answer_prior_0.json").read_text())
    assert sum(h["counts"]) == 300
    assert (out / "hist" / "answer_prior_0_balanced.csv").exists()

    ckpt = out / "teachers" / "answer_prior_0.json"
    ckpt.write_text(ckpt.read_text().replace('"format_version":1', '"format_version":7', 1))
    assert run("distill", "--config", conf, "--seed", 0, "--out", out) == 4


def test_distill_with_mismatched_teacher_settings_exit_4(conf, tmp_path):
    out = tmp_path / "run"
    assert run("gen", "--config", conf, "--seed", 0, "--out", out) == 0
    assert run("train-teacher", "--config", conf, "--seed", 0, "--out", out) == 0
    other = tmp_path / "other.toml"
    other.write_text(TINY_TOML.replace("hidden = 8", "hidden = 8\nfusion = \"sum\""))
    assert run("distill", "--config", other, "--seed", 0, "--out", out) == 4


def test_run_and_ablate(conf, tmp_path):
    out = tmp_path / "run"
    assert run("run", "--config", conf, "--seeds", 2, "--out", out) == 0
    assert json.loads((out / "manifest.json").read_text())["seeds"] == [0, 1]
    assert run("ablate", "--suite", "q7", "--config", conf, "--seeds", 2, "--out", out) == 0
    rows = json.loads((out / "tables" / "q7.json").read_text())
    by = {(r["method"], r["seed"]): r for r in rows}
    for seed in (0, 1):
        for w, readout in (("1", "id_teacher"), ("0", "ood_teacher")):
            a, b = by[(f"ensemble(w_id={w})", seed)], by[(readout, seed)]
            assert (a["id_acc"], a["ood_acc"], a["hm"]) == (b["id_acc"], b["ood_acc"], b["hm"])
    assert all(r["seeds"] == "0 1" and len(r["config_hash"]) == 16 for r in rows)
    assert (out / "tables" / "q7.csv").read_text().startswith("suite,method,seed,")


def test_bad_seed_count(conf, tmp_path):
    assert run("gen", "--config", conf, "--seeds", 0, "--out", tmp_path) == 2
