"""Command-line harness for the whole pipeline:

    gen-data -> train-teacher -> distill -> train -> evaluate

plus translate, bench-latency, schedule-dump (audit), and prelim-study (the
fixed-k transfer matrix). Every subcommand reads an optional config file and
applies flag overrides; report-style commands write delimited files with a
rendered figure next to them. Exit codes: 0 ok, 1 failure (one-line error on
stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bleu import bleu
from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import Corpus, Vocab, build_vocab, distill, load_corpus, read_token_lines, save_corpus
from .curriculum import pacing_boundaries, phase_of, stage_tasks
from .decode import DecodeConfig, clean_tokens, decode_batch, measure_latency, npd_decode
from .experiments import decode_corpus, evaluate_checkpoint, generate_splits, run_prelim_study
from .model import format_k, parse_k
from .train import TrainingAborted, run_training, teacher_schedule

__all__ = ["main"]


class CliError(RuntimeError):
    pass


def _cfg_from(args, extra: dict | None = None) -> ExperimentConfig:
    overrides: dict[str, str] = {}
    for pair in args.set or []:
        if "=" not in pair:
            raise CliError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key, value in (extra or {}).items():
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _split_prefix(cfg: ExperimentConfig, split: str, distilled: bool = False) -> Path:
    name = f"{split}.distilled" if distilled else split
    return Path(f"{cfg.data_prefix()}.{name}")


def _require_corpus(cfg: ExperimentConfig, split: str, distilled: bool = False) -> Corpus:
    prefix = _split_prefix(cfg, split, distilled)
    try:
        return load_corpus(prefix, split=split)
    except FileNotFoundError:
        raise CliError(f"missing corpus files {prefix}.src/.tgt; run gen-data first")


def _load_ckpt(path: str):
    params, opt_state, header = load_checkpoint(path)
    vocab = Vocab(header["vocab"])
    return params, vocab, header


def _check_vocab(cfg: ExperimentConfig, header: dict, vocab_here: Vocab) -> None:
    if list(vocab_here.tokens) != header["vocab"]:
        raise CliError(
            "vocab mismatch between checkpoint and current data "
            f"(checkpoint config {header['config_hash']}, current config {cfg.hash()})"
        )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _cfg_from(
        args,
        {
            "data.task": args.task,
            "data.train_size": args.size,
            "data.dev_size": args.dev_size,
            "data.test_size": args.test_size,
            "data.vocab_size": args.vocab_size,
            "data.len_min": args.len_min,
            "data.len_max": args.len_max,
            "seed": args.seed,
            "data.prefix": args.out,
        },
    )
    for split, corp in generate_splits(cfg).items():
        prefix = _split_prefix(cfg, split)
        save_corpus(corp, prefix)
        print(f"wrote {prefix}.src/.tgt ({len(corp)} pairs)")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _cfg_from(args, {"teacher.steps": args.steps, "seed": args.seed})
    train_corpus = _require_corpus(cfg, "train")
    dev_corpus = _require_corpus(cfg, "dev")
    vocab = build_vocab(train_corpus)
    result = run_training(
        cfg, vocab, train_corpus, dev_corpus, tag="teacher", schedule=teacher_schedule(cfg)
    )
    from .figures import render_training_curves

    fig = render_training_curves(result.metrics_path, cfg.out_dir / "teacher_training.png")
    print(
        f"teacher trained {result.steps_run} steps, final loss {result.final_loss:.4f}; "
        f"checkpoint {result.checkpoint_path}; figure {fig}"
    )
    return 0


def cmd_distill(args) -> int:
    cfg = _cfg_from(args)
    teacher_path = args.teacher or (cfg.out_dir / "teacher.ckpt")
    params, vocab, header = _load_ckpt(teacher_path)
    train_corpus = _require_corpus(cfg, "train")
    _check_vocab(cfg, header, build_vocab(train_corpus))
    out = distill(params, train_corpus, vocab)
    prefix = _split_prefix(cfg, "train", distilled=True)
    save_corpus(out, prefix)
    changed = sum(a.tgt != b.tgt for a, b in zip(train_corpus.pairs, out.pairs))
    print(f"wrote {prefix}.src/.tgt ({len(out)} pairs, {changed} targets changed)")
    return 0


def cmd_train(args) -> int:
    cfg = _cfg_from(args, {"seed": args.seed})
    schedule = cfg.direct_transfer_schedule() if args.direct_transfer else cfg.schedule()
    distilled_prefix = _split_prefix(cfg, "train", distilled=True)
    use_distilled = not args.no_distill
    if use_distilled and not Path(f"{distilled_prefix}.src").exists():
        if schedule.steps_at > 0:
            raise CliError(
                f"no distilled corpus at {distilled_prefix}.src; "
                "run train-teacher and distill first, or pass --no-distill"
            )
        use_distilled = False
    raw_train = _require_corpus(cfg, "train")
    train_corpus = _require_corpus(cfg, "train", distilled=True) if use_distilled else raw_train
    dev_corpus = _require_corpus(cfg, "dev")
    vocab = build_vocab(raw_train)
    try:
        result = run_training(
            cfg, vocab, train_corpus, dev_corpus, tag="model", schedule=schedule,
            resume=Path(args.resume) if args.resume else None,
        )
    except TrainingAborted as exc:
        kept = f"; last good checkpoint retained at {exc.last_good}" if exc.last_good else ""
        raise CliError(f"training aborted: {exc}{kept}")
    from .figures import render_training_curves

    fig = render_training_curves(result.metrics_path, cfg.out_dir / "model_training.png")
    print(
        f"trained {result.steps_run} steps"
        + (" (early stop)" if result.stopped_early else "")
        + f", final loss {result.final_loss:.4f}; checkpoint {result.checkpoint_path}; figure {fig}"
    )
    return 0


def cmd_translate(args) -> int:
    cfg = _cfg_from(args, {"decode.k": args.k, "decode.b": args.b})
    params, vocab, _ = _load_ckpt(args.ckpt)
    decode_cfg = DecodeConfig(
        k=parse_k(args.k) if args.k else cfg.decode_config().k,
        b=cfg["decode.b"],
        rescore=args.rescore or cfg["decode.rescore"],
        max_len=cfg["model.max_len"],
    )
    teacher = None
    if decode_cfg.rescore:
        if not args.teacher:
            raise CliError("--rescore requires --teacher CKPT")
        teacher, _, _ = _load_ckpt(args.teacher)
    lines = read_token_lines(args.input)
    if not lines:
        raise CliError(f"no sentences in {args.input}")
    sources = [vocab.encode(toks) for toks in lines]
    out_lines = []
    if decode_cfg.rescore:
        for x in sources:
            hyp = npd_decode(params, teacher, x, decode_cfg, pad_id=vocab.pad_id, eos_id=vocab.eos_id)
            out_lines.append(" ".join(vocab.decode(clean_tokens(hyp.tokens, vocab.pad_id, vocab.eos_id))))
    else:
        lengths = [min(len(x), decode_cfg.max_len) for x in sources]
        for h in decode_batch(params, sources, decode_cfg.k, lengths, pad_id=vocab.pad_id):
            out_lines.append(" ".join(vocab.decode(clean_tokens(h.tokens, vocab.pad_id, vocab.eos_id))))
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(out_lines) + "\n")
    print(f"wrote {len(out_lines)} translations to {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _cfg_from(args, {"decode.b": args.b, "decode.rescore": args.rescore})
    params, vocab, header = _load_ckpt(args.ckpt)
    test_corpus = _require_corpus(cfg, args.split)
    train_corpus = _require_corpus(cfg, "train")
    _check_vocab(cfg, header, build_vocab(train_corpus))
    decode_cfg = cfg.decode_config()
    teacher = None
    if decode_cfg.rescore:
        teacher_path = args.teacher or (cfg.out_dir / "teacher.ckpt")
        teacher, _, theader = _load_ckpt(teacher_path)
        if theader["vocab"] != header["vocab"]:
            raise CliError(
                "vocab mismatch between model and teacher checkpoints "
                f"({header['config_hash']} vs {theader['config_hash']})"
            )
    result = evaluate_checkpoint(
        params, vocab, test_corpus, decode_cfg, teacher=teacher,
        repeats=cfg["eval.repeats"], measure=not args.no_latency,
    )
    out_path = Path(args.out) if args.out else cfg.out_dir / "eval.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(result.to_json_dict(), sort_keys=True, indent=2) + "\n")
    b = result.bleu
    line = (
        f"BLEU {b.bleu:.2f} (p1-4 {' '.join(f'{p:.3f}' for p in b.precisions)}, "
        f"BP {b.brevity_penalty:.3f}) on {len(result.hypotheses)} sentences, "
        f"{result.candidates_per_sentence} candidate(s)/sentence"
    )
    if result.latency:
        line += f"; median latency {result.latency.median_ms:.2f} ms"
    print(line)
    print(f"wrote {out_path}")
    return 0


def cmd_bench_latency(args) -> int:
    cfg = _cfg_from(args, {"eval.repeats": args.repeats})
    params, vocab, _ = _load_ckpt(args.ckpt)
    if args.length:
        rng = np.random.default_rng(cfg.seed)
        content = [i for i in range(len(vocab)) if i not in (vocab.pad_id, vocab.eos_id, vocab.unk_id)]
        sources = [
            [int(content[j]) for j in rng.integers(0, len(content), size=args.length)]
            for _ in range(args.n_sentences)
        ]
    else:
        test_corpus = _require_corpus(cfg, "test")
        sources = [vocab.encode(p.src) for p in list(test_corpus)[: args.n_sentences]]
    reports = []
    for k_text in args.ks.split(","):
        dc = DecodeConfig(k=parse_k(k_text), b=0, rescore=False, max_len=cfg["model.max_len"])
        report = measure_latency(params, None, sources, dc, repeats=cfg["eval.repeats"], pad_id=vocab.pad_id)
        reports.append(report)
        print(
            f"k={k_text}: median {report.median_ms:.2f} ms/sentence, "
            f"{report.passes_total} passes, {report.tokens_per_sec:.0f} tok/s"
        )
    out_json = cfg.out_dir / "latency.json"
    out_json.parent.mkdir(parents=True, exist_ok=True)
    out_json.write_text(json.dumps([r.to_json_dict() for r in reports], sort_keys=True, indent=2) + "\n")
    from .figures import render_latency_bars

    fig = render_latency_bars(reports, cfg.out_dir / "latency.png")
    print(f"wrote {out_json} and {fig}")
    return 0


def cmd_schedule_dump(args) -> int:
    cfg = _cfg_from(
        args,
        {
            "schedule.pacing": args.pacing,
            "schedule.steps_sat": args.sat_steps,
            "schedule.steps_at": args.at_steps,
            "schedule.steps_nat": args.nat_steps,
            "schedule.window": args.window,
            "schedule.ladder": args.ladder,
        },
    )
    schedule = cfg.schedule()
    bounds = pacing_boundaries(schedule.pacing, schedule.steps_sat) if schedule.steps_sat else ()
    print(
        f"pacing {schedule.pacing}, middle-phase steps {schedule.steps_sat}, "
        "stage boundaries " + "/".join(str(b) for b, _ in bounds)
    )
    for start, k in bounds:
        print(f"  k={k} from middle-phase step {start}")
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv_path = out_dir / "schedule.tsv"
    with open(tsv_path, "w") as f:
        f.write("step\tphase\ttasks\n")
        for step in range(schedule.total_steps):
            tasks = ",".join(format_k(k) for k in stage_tasks(schedule, step))
            f.write(f"{step}\t{phase_of(schedule, step).tag}\t{tasks}\n")
    from .figures import render_schedule

    fig = render_schedule(schedule, out_dir / "schedule.png")
    print(f"wrote {tsv_path} and {fig}")
    return 0


def cmd_prelim_study(args) -> int:
    cfg = _cfg_from(args, {"prelim.steps": args.steps, "seed": args.seed})
    train_ks = [parse_k(t) for t in args.train_ks.split(",")]
    test_ks = [parse_k(t) for t in args.test_ks.split(",")]
    study = run_prelim_study(cfg, train_ks, test_ks, out_dir=cfg.out_dir, progress=print)
    out_dir = cfg.out_dir
    tsv_path = out_dir / "prelim.tsv"
    tsv_path.write_text(study.to_tsv())
    (out_dir / "prelim.json").write_text(json.dumps(study.to_json_dict(), sort_keys=True, indent=2) + "\n")
    from .figures import render_prelim_matrix

    fig = render_prelim_matrix(study, out_dir / "prelim.png")
    print(study.to_tsv(), end="")
    print(f"wrote {tsv_path}, {out_dir / 'prelim.json'}, {fig}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paratrans",
        description="Desk-scale group-parallel transduction lab: curriculum training, "
        "distillation, parallel decoding, BLEU and latency evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("gen-data", help="generate the synthetic train/dev/test corpora")
    common(p)
    p.add_argument("--task", choices=["copy", "reverse", "mapped-swap"])
    p.add_argument("--size", type=int, help="training pairs")
    p.add_argument("--dev-size", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--len-min", type=int)
    p.add_argument("--len-max", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="data file prefix")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train the left-to-right teacher (k=1)")
    common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="re-target the training corpus with teacher decodes")
    common(p)
    p.add_argument("--teacher", help="teacher checkpoint (default <out_dir>/teacher.ckpt)")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train", help="curriculum-train the parallel model")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-distill", action="store_true", help="train on the raw corpus")
    p.add_argument("--direct-transfer", action="store_true",
                   help="skip the middle phase, folding its budget into the final phase")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode a source file, one sentence per line")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", help="parallelism degree (int or N)")
    p.add_argument("--b", type=int, help="length half-window for rescoring decode")
    p.add_argument("--rescore", action="store_true")
    p.add_argument("--teacher", help="teacher checkpoint for --rescore")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="BLEU + latency of a checkpoint on a split")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--teacher")
    p.add_argument("--split", default="test", choices=["dev", "test"])
    p.add_argument("--b", type=int)
    p.add_argument("--rescore", action="store_const", const="true", default=None)
    p.add_argument("--no-latency", action="store_true")
    p.add_argument("--out", help="path for the JSON report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench-latency", help="decode-latency benchmark across k values")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ks", default="1,N", help="comma-separated parallelism degrees")
    p.add_argument("--n-sentences", type=int, default=200)
    p.add_argument("--length", type=int, help="use synthetic sources of this length")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_bench_latency)

    p = sub.add_parser("schedule-dump", help="print and plot the task schedule")
    common(p)
    p.add_argument("--pacing", choices=["linear", "logarithmic", "exponential"])
    p.add_argument("--at-steps", type=int)
    p.add_argument("--sat-steps", type=int)
    p.add_argument("--nat-steps", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--ladder")
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("prelim-study", help="train-k x test-k transfer matrix")
    common(p)
    p.add_argument("--train-ks", default="1,2,4,8,16,N")
    p.add_argument("--test-ks", default="1,2,4,8,16,N")
    p.add_argument("--steps", type=int, help="training budget per cell")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prelim_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
