import csv
import json

import numpy as np
import pytest

from egad.checkpoint import load_checkpoint
from egad.cli import main
from egad.diagnostics import MetricsRecord

TINY = """\
corpus:
  path: {corpus}
  val_fraction: 0.1
teacher:
  d_model: 16
  n_layers: 2
  n_heads: 2
  d_ff: 32
  max_seq_len: 16
student:
  d_model: 8
  n_layers: 2
  n_heads: 2
  d_ff: 16
  max_seq_len: 16
teacher_train:
  batch_size: 16
  epochs: 3
  learning_rate: 3.0e-3
train:
  batch_size: 16
  epochs: 3
  learning_rate: 3.0e-3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.txt"
    rng = np.random.default_rng(0)
    parts = [("hello world. " if rng.random() < 0.7 else "".join(rng.choice(list("qwxz"), 5)) + " ")
             for _ in range(150)]
    corpus.write_text("".join(parts), encoding="utf-8")
    config = root / "tiny.yaml"
    config.write_text(TINY.format(corpus=corpus), encoding="utf-8")
    teacher_dir = root / "teacher"
    assert main(["train-teacher", "--config", str(config), "--out", str(teacher_dir)]) == 0
    return root, config, teacher_dir / "teacher.ckpt"


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def test_train_teacher_outputs(workspace):
    root, _, teacher = workspace
    ck = load_checkpoint(teacher)
    assert ck.metadata["kind"] == "teacher"
    assert ck.model_config["d_model"] == 16
    assert ck.optimizer_m.keys() == ck.params.keys()
    summary = json.loads((teacher.parent / "summary.json").read_text())
    rows = list(csv.reader(open(teacher.parent / "teacher_loss.csv")))
    assert rows[0] == ["step", "loss"] and len(rows) - 1 == summary["steps"]


def test_distill_then_eval(workspace, capsys):
    root, config, teacher = workspace
    out = root / "egad"
    assert main(["distill", "--config", str(config), "--out", str(out), "--teacher", str(teacher)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["arm"] == "egad"
    records = read_jsonl(out / "metrics.jsonl")
    assert len(records) == summary["steps"]
    assert [r["step"] for r in records] == list(range(len(records)))
    assert all(list(r) == sorted(MetricsRecord.field_names()) for r in records)

    assert main(["eval", "--config", str(config), "--out", str(out), "--teacher", str(teacher)]) == 0
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["mean_kl"] < records[0]["mean_kl"]
    assert json.loads((out / "eval.json").read_text()) == result

    curve = list(csv.reader(open(out / "kl_curve.csv")))
    assert curve[0] == ["step", "mean_kl"] and len(curve) == len(records) + 1
    ck = load_checkpoint(out / "student.ckpt")
    assert "proj.matrix" in ck.params and ck.params["proj.matrix"].shape == (8, 16)
    assert ck.metadata["switch_step"] == summary["switch_step"]


def test_baseline_flag(workspace):
    root, config, teacher = workspace
    out = root / "kd"
    assert main(["distill", "--baseline-kd", "--config", str(config), "--out", str(out), "--teacher", str(teacher),
                 "--set", "train.max_steps=3"]) == 0
    ck = load_checkpoint(out / "student.ckpt")
    assert ck.metadata["arm"] == "kd"
    tc = ck.metadata["train_config"]
    assert tc["uniform_weights"] and tc["fixed_temperature"] == 1.0 and not tc["deep_path"]
    assert all(r["temperature_mean"] == 1.0 for r in read_jsonl(out / "metrics.jsonl"))


def test_analyze_entropy(workspace):
    root, config, teacher = workspace
    out = root / "entropy"
    assert main(["analyze-entropy", "--config", str(config), "--out", str(out), "--teacher", str(teacher)]) == 0
    rows = list(csv.reader(open(out / "entropy_kde.csv")))
    assert rows[0] == ["entropy", "density"]
    grid, dens = np.array([[float(a), float(b)] for a, b in rows[1:]]).T
    assert abs(np.trapezoid(dens, grid) - 1) <= 0.02
    summary = json.loads((out / "entropy_summary.json").read_text())
    assert 0 <= summary["median"] <= summary["max_entropy"]


def test_gradcheck_quick(tmp_path, capsys):
    assert main(["gradcheck", "--quick", "--out", str(tmp_path)]) == 0
    report = capsys.readouterr().out
    for name in ("matmul", "softmax", "layer_norm", "gelu", "tempered_kl", "egad_objective"):
        assert f"PASS {name}" in report
    assert (tmp_path / "gradcheck.txt").exists()


def test_exit_codes(workspace, tmp_path, monkeypatch, capsys):
    root, config, teacher = workspace
    assert main(["distill", "--config", str(config), "--out", str(tmp_path), "--teacher",
                 str(tmp_path / "none.ckpt")]) == 4
    assert main(["distill", "--config", str(config), "--out", str(tmp_path)]) == 4
    assert main(["distill", "--config", str(config), "--set", "train.t_max=0.5", "--out", str(tmp_path)]) == 2
    assert main(["train-teacher", "--set", f"corpus.path={tmp_path / 'none.txt'}", "--out", str(tmp_path)]) == 3
    monkeypatch.setenv("EGAD_THREADS", "zero")
    assert main(["gradcheck", "--quick", "--out", str(tmp_path)]) == 2
    monkeypatch.setenv("EGAD_THREADS", "1")
    assert main(["eval", "--config", str(config), "--out", str(tmp_path), "--teacher", str(teacher)]) == 4
    err = capsys.readouterr().err
    assert "egad: error:" in err


def test_vocab_mismatch_is_ingestion_error(workspace, tmp_path):
    root, config, teacher = workspace
    other = tmp_path / "other.txt"
    other.write_text("completely different text!", encoding="utf-8")
    assert main(["distill", "--config", str(config), "--set", f"corpus.path={other}",
                 "--out", str(tmp_path), "--teacher", str(teacher)]) == 3


def test_reproducible_runs(workspace, tmp_path):
    root, config, teacher = workspace
    for name in ("a", "b"):
        assert main(["distill", "--config", str(config), "--out", str(tmp_path / name), "--teacher", str(teacher),
                     "--seed", "4", "--set", "train.max_steps=4"]) == 0
    assert (tmp_path / "a" / "student.ckpt").read_bytes() == (tmp_path / "b" / "student.ckpt").read_bytes()
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
