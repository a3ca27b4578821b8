"""Curriculum training loop: per-batch task sampling, warmup Adam, JSONL
metrics, periodic checkpoints, and resumable deterministic state.

All stochasticity is drawn from seeds derived statelessly from
(config seed, purpose, step), so resuming from a checkpoint replays the exact
remaining trajectory and identical seeds give bit-identical runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .corpus import Batch, Corpus, Vocab, batch as make_batches
from .curriculum import CurriculumSchedule, phase_of, sample_task
from .model import K_N, ModelParams, batch_nll, format_k, init_params, parse_k
from .optim import adam_step, lr_at_step

__all__ = ["TrainResult", "TrainingAborted", "run_training", "dev_loss", "teacher_schedule"]


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, last_good: Optional[Path]):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    steps_run: int
    final_loss: float
    stopped_early: bool
    params: ModelParams


def teacher_schedule(cfg: ExperimentConfig) -> CurriculumSchedule:
    """Left-to-right-only schedule for the distillation teacher."""
    return CurriculumSchedule(
        steps_at=cfg["teacher.steps"],
        steps_sat=0,
        steps_nat=0,
        pacing=cfg["schedule.pacing"],
        window=1,
    )


def dev_loss(params: ModelParams, vocab: Vocab, corpus: Corpus, k=K_N, max_tokens: int = 1024) -> float:
    """Token-weighted validation NLL at parallelism k (no dropout, no tape)."""
    total, weight = 0.0, 0
    with T.no_grad():
        for b in make_batches(corpus, vocab, max_tokens, seed=0):
            loss = batch_nll(params, b.src, b.src_lens, b.tgt, b.tgt_lens, k, vocab.pad_id)
            total += loss.item() * b.n_target_tokens
            weight += b.n_target_tokens
    return total / weight


def run_training(
    cfg: ExperimentConfig,
    vocab: Vocab,
    train_corpus: Corpus,
    dev_corpus: Optional[Corpus] = None,
    tag: str = "model",
    schedule: Optional[CurriculumSchedule] = None,
    force_k=None,
    resume: Optional[Path] = None,
    out_dir: Optional[Path] = None,
    max_steps: Optional[int] = None,
) -> TrainResult:
    """Train through the schedule's phases, sampling one task per batch.

    force_k pins every step to a single task (constant-k training, used by the
    fixed-k study cells). max_steps caps the steps executed in this call
    (resume later to finish). NaN anywhere aborts with the last written
    checkpoint retained.
    """
    out_dir = Path(out_dir) if out_dir is not None else cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = schedule or cfg.schedule()
    force_k = parse_k(force_k) if force_k is not None else None
    ckpt_path = out_dir / f"{tag}.ckpt"
    metrics_path = out_dir / f"{tag}.metrics.jsonl"
    config_hash = cfg.hash()

    start_step = 0
    if resume is not None:
        params, opt_state, header = load_checkpoint(resume)
        if header["config_hash"] != config_hash:
            raise CheckpointError(
                f"resume refused: checkpoint config {header['config_hash']} != current {config_hash}"
            )
        if header["vocab"] != list(vocab.tokens):
            raise CheckpointError("resume refused: vocabulary differs from checkpoint")
        start_step = header["global_step"]
    else:
        params = init_params(cfg.model_config(len(vocab)), seed=cfg.child_seed("init", tag))
        opt_state = cfg.optimizer_state()

    total_steps = schedule.total_steps
    if max_steps is not None:
        total_steps = min(total_steps, start_step + max_steps)
    log_interval = cfg["train.log_interval"]
    ckpt_interval = cfg["train.ckpt_interval"]
    patience = cfg["train.nat_patience"]
    eval_interval = cfg["train.eval_interval"]
    max_tokens = cfg["data.max_tokens"]
    smoothing = cfg["model.label_smoothing"]
    dropout = cfg["model.dropout"]

    # Packing is length-driven, so the batch count is epoch-independent; only
    # the order reshuffles with a per-epoch child seed.
    batches: list[Batch] = make_batches(
        train_corpus, vocab, max_tokens, seed=cfg.child_seed("batch", tag, 0)
    )
    n_batches = len(batches)
    epoch = 0
    best_dev = float("inf")
    bad_evals = 0
    stopped_early = False
    last_loss = float("nan")
    wrote_ckpt = resume is not None

    def save(step_count: int):
        save_checkpoint(
            ckpt_path,
            params,
            opt_state,
            step_count,
            config_hash,
            list(vocab.tokens),
            extra={"tag": tag, "schedule": schedule.describe()},
        )

    metrics = open(metrics_path, "a" if resume is not None else "w")
    try:
        step = start_step
        while step < total_steps:
            e = step // n_batches
            if e != epoch:
                epoch = e
                batches = make_batches(
                    train_corpus, vocab, max_tokens, seed=cfg.child_seed("batch", tag, epoch)
                )
            b = batches[step % n_batches]

            if force_k is not None:
                k = force_k
                phase_tag = "FIXED"
            else:
                rng = np.random.default_rng(cfg.child_seed("task", tag, step))
                k = sample_task(schedule, step, rng)
                phase_tag = phase_of(schedule, step).tag
            drop_rng = (
                np.random.default_rng(cfg.child_seed("drop", tag, step)) if dropout > 0 else None
            )

            try:
                params.zero_grads()
                loss = batch_nll(
                    params, b.src, b.src_lens, b.tgt, b.tgt_lens, k, vocab.pad_id,
                    label_smoothing=smoothing, drop_rng=drop_rng,
                )
                loss.backward(inputs=list(params.tensors.values()))
                adam_step(params.tensors, params.grads(), opt_state)
            except FloatingPointError as exc:
                metrics.close()
                raise TrainingAborted(
                    f"step {step}: {exc}", ckpt_path if wrote_ckpt else None
                ) from exc
            last_loss = loss.item()

            if step % log_interval == 0:
                record = {
                    "step": step,
                    "phase": phase_tag,
                    "k": format_k(k),
                    "loss": last_loss,
                    "lr": lr_at_step(opt_state),
                }
                metrics.write(json.dumps(record, sort_keys=True) + "\n")
            if (step + 1) % ckpt_interval == 0:
                save(step + 1)
                wrote_ckpt = True

            if (
                patience > 0
                and dev_corpus is not None
                and force_k is None
                and phase_tag == "NAT"
                and (step + 1) % eval_interval == 0
            ):
                d = dev_loss(params, vocab, dev_corpus)
                if d < best_dev - 1e-4:
                    best_dev = d
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= patience:
                        stopped_early = True
                        step += 1
                        break
            step += 1
    finally:
        if not metrics.closed:
            metrics.close()

    save(step)
    return TrainResult(
        checkpoint_path=ckpt_path,
        metrics_path=metrics_path,
        steps_run=step,
        final_loss=last_loss,
        stopped_early=stopped_early,
        params=params,
    )
