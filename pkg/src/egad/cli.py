"""Command-line entry point: ``egad <subcommand> [options]``.

Subcommands write everything under ``--out``:

    train-teacher    teacher.ckpt, teacher_loss.csv, summary.json
    distill          student.ckpt, metrics.jsonl, kl_curve.csv, summary.json
    eval             eval.json (also printed)
    analyze-entropy  entropy_kde.csv, entropy_summary.json
    gradcheck        gradcheck.txt (also printed)

Exit codes: 0 ok, 2 config, 3 ingestion, 4 missing dependency (e.g. no
teacher checkpoint), 5 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import PRESETS, RunConfig, load_config
from .corpus import PAD_ID, Corpus, bundled_corpus_path, ingest_corpus, pad_batch
from .diagnostics import MetricsRecord, entropy_kde
from .entropy import entropy_from_logits, entropy_threshold
from .errors import ConfigError, DependencyError, EgadError, IngestionError
from .model import ModelConfig, ParameterSet, forward
from .trainer import baseline_kd, distill_student, evaluate_student, train_teacher
from . import autodiff as ad

log = logging.getLogger("egad")

PROJ_PREFIX = "proj."


# ---------------------------------------------------------------------------
# plumbing


def _thread_limit():
    raw = os.environ.get("EGAD_THREADS", "").strip()
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"EGAD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"EGAD_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.out={json.dumps(str(args.out))}")
    if getattr(args, "teacher", None):
        overrides.append(f"run.teacher_checkpoint={json.dumps(str(args.teacher))}")
    return load_config(args.config, preset=args.preset, overrides=overrides)


def _corpus(cfg: RunConfig) -> Corpus:
    path = cfg["corpus.path"] or bundled_corpus_path()
    return ingest_corpus(path, max_seq_len=cfg["teacher.max_seq_len"],
                         val_fraction=cfg["corpus.val_fraction"], seed=cfg["corpus.split_seed"])


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_curve(path: Path, header: tuple[str, str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for a, b in rows:
            writer.writerow([a, repr(float(b))])


def _teacher_path(cfg: RunConfig) -> Path:
    return Path(cfg["run.teacher_checkpoint"] or Path(cfg.out) / "teacher.ckpt")


def _load_model(path: Path, role: str, corpus: Corpus) -> tuple[ModelConfig, ParameterSet, Checkpoint]:
    if not path.exists():
        raise DependencyError(f"{role} checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    vocab = ckpt.metadata.get("vocab")
    if vocab is not None and vocab != corpus.vocab:
        raise IngestionError(f"{role} checkpoint {path} was trained on a different vocabulary")
    config = ModelConfig(**ckpt.model_config)
    params = {k: v for k, v in ckpt.params.items() if not k.startswith(PROJ_PREFIX)}
    return config, params, ckpt


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_teacher(args, cfg: RunConfig) -> int:
    corpus = _corpus(cfg)
    out = _out_dir(cfg)
    t_cfg = cfg.model_config("teacher", corpus.vocab_size)
    tt_cfg = cfg.teacher_train_config()
    losses: list[tuple[int, float]] = []

    def on_step(step, loss):
        losses.append((step, loss))
        if step % args.log_every == 0:
            log.info("teacher step %d loss %.4f", step, loss)

    start = time.perf_counter()
    params, state = train_teacher(t_cfg, tt_cfg, corpus.train, on_step=on_step, return_state=True)
    ckpt = Checkpoint(model_config=asdict(t_cfg), params=params, optimizer_m=state.m,
                      optimizer_v=state.v, step=state.step, seed=cfg.seed,
                      metadata={"kind": "teacher", "vocab": corpus.vocab,
                                "train_config": tt_cfg.to_dict(), "label": cfg["run.label"]})
    path = save_checkpoint(out / "teacher.ckpt", ckpt)
    _write_curve(out / "teacher_loss.csv", ("step", "loss"), losses)
    summary = {"checkpoint": path, "steps": len(losses), "final_loss": losses[-1][1] if losses else None,
               "vocab_size": corpus.vocab_size, "seconds": time.perf_counter() - start}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_distill(args, cfg: RunConfig) -> int:
    corpus = _corpus(cfg)
    t_cfg, teacher, _ = _load_model(_teacher_path(cfg), "teacher", corpus)
    out = _out_dir(cfg)
    s_cfg = cfg.model_config("student", corpus.vocab_size)
    train_cfg = cfg.train_config()
    arm = "kd" if args.baseline_kd else "egad"
    run = baseline_kd if args.baseline_kd else distill_student

    metrics_path = out / "metrics.jsonl"
    start = time.perf_counter()
    with open(metrics_path, "w", encoding="utf-8") as sink:
        def on_step(rec: MetricsRecord):
            sink.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            if rec.step % args.log_every == 0:
                log.info("%s step %d kl %.4f loss %.4f", arm, rec.step, rec.mean_kl, rec.weighted_total)

        res = run(teacher, t_cfg, s_cfg, train_cfg, corpus.train, on_step=on_step)

    params = dict(res.student)
    params[PROJ_PREFIX + "matrix"] = res.projection
    ckpt = Checkpoint(model_config=asdict(s_cfg), params=params, optimizer_m=res.optimizer.m,
                      optimizer_v=res.optimizer.v, step=res.optimizer.step, seed=cfg.seed,
                      metadata={"kind": "student", "arm": arm, "vocab": corpus.vocab,
                                "train_config": res.train_config.to_dict(),
                                "teacher_config": asdict(t_cfg), "label": cfg["run.label"],
                                "total_steps": res.total_steps, "switch_step": res.switch_step})
    path = save_checkpoint(out / "student.ckpt", ckpt)
    _write_curve(out / "kl_curve.csv", ("step", "mean_kl"), [(m.step, m.mean_kl) for m in res.metrics])
    summary = {"arm": arm, "checkpoint": path, "steps": len(res.metrics),
               "switch_step": res.switch_step,
               "step0_mean_kl": res.metrics[0].mean_kl if res.metrics else None,
               "final_mean_kl": res.metrics[-1].mean_kl if res.metrics else None,
               "seconds": time.perf_counter() - start}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    corpus = _corpus(cfg)
    t_cfg, teacher, _ = _load_model(_teacher_path(cfg), "teacher", corpus)
    student_path = Path(args.student or Path(cfg.out) / "student.ckpt")
    s_cfg, student, _ = _load_model(student_path, "student", corpus)
    heldout = corpus.val if args.split == "val" else corpus.train if args.split == "train" else corpus.sequences
    result = evaluate_student(student, s_cfg, teacher, t_cfg, heldout)
    result["split"] = args.split
    _write_json(_out_dir(cfg) / "eval.json", result)
    print(json.dumps(result, sort_keys=True))
    return 0


def teacher_entropies(params: ParameterSet, config: ModelConfig, sequences, batch_size: int = 64) -> np.ndarray:
    """Entropies of the teacher's next-token distributions at every non-padding position."""
    chunks = []
    length = config.max_seq_len
    seqs = [np.asarray(s)[:length] for s in sequences if len(s)]
    with ad.no_grad():
        for i in range(0, len(seqs), batch_size):
            ids = pad_batch(seqs[i:i + batch_size], length)
            logits = forward(params, ids, config).logits.data.reshape(-1, config.vocab_size)
            chunks.append(entropy_from_logits(logits[ids.reshape(-1) != PAD_ID]))
    return np.concatenate(chunks)


def cmd_analyze_entropy(args, cfg: RunConfig) -> int:
    corpus = _corpus(cfg)
    t_cfg, teacher, _ = _load_model(_teacher_path(cfg), "teacher", corpus)
    seqs = corpus.val if args.split == "val" else corpus.train if args.split == "train" else corpus.sequences
    h = teacher_entropies(teacher, t_cfg, seqs)
    kde = entropy_kde(h)
    out = _out_dir(cfg)
    _write_curve(out / "entropy_kde.csv", ("entropy", "density"), zip(kde.grid, kde.density))
    q = cfg["train.quantile"]
    summary = {"split": args.split, "n_tokens": int(h.size), "mean": float(h.mean()),
               "median": float(np.median(h)), "mode": kde.mode, "bandwidth": kde.bandwidth,
               "integral": kde.integral(), "threshold": entropy_threshold(h, q), "quantile": q,
               "max_entropy": float(np.log(corpus.vocab_size))}
    _write_json(out / "entropy_summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradcheck import run_all

    start = time.perf_counter()
    results = run_all(quick=args.quick)
    lines = [r.line() for r in results]
    failed = [r.name for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed "
                 f"in {time.perf_counter() - start:.1f}s")
    report = "\n".join(lines)
    print(report)
    (_out_dir(cfg) / "gradcheck.txt").write_text(report + "\n", encoding="utf-8")
    return 5 if failed else 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (nested sections or dotted keys)")
    common.add_argument("--out", help="output directory (run.out)")
    common.add_argument("--seed", type=int, help="run seed (run.seed)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named set of overrides")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--log-every", type=int, default=25, help="log progress every N steps")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="egad", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train-teacher", parents=[common], help="pretrain the teacher by next-token CE")

    p = sub.add_parser("distill", parents=[common], help="distill a student from a teacher checkpoint")
    p.add_argument("--teacher", help="teacher checkpoint (default: run.teacher_checkpoint or OUT/teacher.ckpt)")
    p.add_argument("--baseline-kd", action="store_true", help="plain KD: uniform weights, T=1, logits only")

    p = sub.add_parser("eval", parents=[common], help="score a student against its teacher")
    p.add_argument("--teacher")
    p.add_argument("--student", help="student checkpoint (default OUT/student.ckpt)")
    p.add_argument("--split", choices=("val", "train", "all"), default="val")

    p = sub.add_parser("analyze-entropy", parents=[common], help="KDE of teacher token entropies")
    p.add_argument("--teacher")
    p.add_argument("--split", choices=("val", "train", "all"), default="all")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient validation")
    p.add_argument("--quick", action="store_true", help="fewer cases per check")
    return parser


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "analyze-entropy": cmd_analyze_entropy,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _config_from_args(args)
        with _thread_limit():
            return COMMANDS[args.command](args, cfg)
    except EgadError as exc:
        print(f"egad: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
