"""Matplotlib renderings saved next to the delimited report files: training
curves from the metrics JSONL, the curriculum staircase, the fixed-k study
heatmap, and latency comparison bars."""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .curriculum import CurriculumSchedule, stage_tasks
from .decode import LatencyReport
from .experiments import PrelimStudy
from .model import K_N, format_k

__all__ = [
    "render_training_curves",
    "render_schedule",
    "render_prelim_matrix",
    "render_latency_bars",
]

_RC = {"figure.dpi": 120, "axes.grid": True, "grid.alpha": 0.3, "font.size": 9}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def _ladder_rung(ladder, k) -> int:
    return ladder.index(k)


def render_training_curves(metrics_path: str | Path, out_path: str | Path) -> Path:
    """Loss and scheduled-k trajectories from a metrics JSONL file."""
    records = [json.loads(line) for line in Path(metrics_path).read_text().splitlines() if line]
    if not records:
        raise ValueError(f"no records in {metrics_path}")
    steps = [r["step"] for r in records]
    losses = [r["loss"] for r in records]
    ks = [r["k"] for r in records]
    k_labels = sorted(set(ks), key=lambda s: math.inf if s == "N" else int(s))
    k_rung = {lab: i for i, lab in enumerate(k_labels)}

    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5), height_ratios=[2, 1])
        ax1.plot(steps, losses, lw=1.0, color="tab:blue")
        ax1.set_ylabel("training loss (nats/token)")
        for bound in _phase_bounds(records):
            ax1.axvline(bound, color="gray", lw=0.8, ls="--")
            ax2.axvline(bound, color="gray", lw=0.8, ls="--")
        ax2.step(steps, [k_rung[k] for k in ks], where="post", color="tab:orange")
        ax2.set_yticks(range(len(k_labels)), k_labels)
        ax2.set_ylabel("sampled k")
        ax2.set_xlabel("step")
        return _save(fig, out_path)


def _phase_bounds(records) -> list[int]:
    bounds = []
    for prev, cur in zip(records, records[1:]):
        if prev["phase"] != cur["phase"]:
            bounds.append(cur["step"])
    return bounds


def render_schedule(schedule: CurriculumSchedule, out_path: str | Path) -> Path:
    """Staircase of staged tasks over the whole run (band = task window)."""
    ladder = list(schedule.ladder)
    steps = np.arange(schedule.total_steps)
    lo = np.empty(len(steps))
    hi = np.empty(len(steps))
    for s in steps:
        tasks = stage_tasks(schedule, int(s))
        rungs = [_ladder_rung(ladder, k) for k in tasks]
        lo[s], hi[s] = min(rungs), max(rungs)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 3))
        ax.fill_between(steps, lo - 0.08, hi + 0.08, step="post", alpha=0.4, color="tab:orange")
        ax.step(steps, hi, where="post", color="tab:orange", lw=1.2)
        ax.set_yticks(range(len(ladder)), [format_k(k) for k in ladder])
        ax.set_xlabel("global step")
        ax.set_ylabel("staged tasks k")
        ax.set_title(
            f"{schedule.pacing} pacing, window {schedule.window} "
            f"(AT {schedule.steps_at} / SAT {schedule.steps_sat} / NAT {schedule.steps_nat})"
        )
        return _save(fig, out_path)


def render_prelim_matrix(study: PrelimStudy, out_path: str | Path) -> Path:
    """Heatmap of the train-k x test-k score matrix ('/' cells blank)."""
    rows = list(study.rows())
    train_labels = [format_k(k) for k in study.train_ks]
    data = np.full((len(rows), len(train_labels)), np.nan)
    for i, (_, row) in enumerate(rows):
        for j, v in enumerate(row):
            if v is not None:
                data[i, j] = v
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.1 * len(train_labels) + 2, 1.0 * len(rows) + 1.5))
        masked = np.ma.masked_invalid(data)
        im = ax.imshow(masked, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(train_labels)), [f"k={t}" for t in train_labels])
        ax.set_yticks(range(len(rows)), [f"k'={label}" for label, _ in rows])
        ax.set_xlabel("trained with")
        ax.set_ylabel("tested at")
        ax.grid(False)
        for i in range(data.shape[0]):
            for j in range(data.shape[1]):
                text = "/" if np.isnan(data[i, j]) else f"{data[i, j]:.1f}"
                ax.text(j, i, text, ha="center", va="center", color="white", fontsize=8)
        fig.colorbar(im, ax=ax, label="BLEU")
        return _save(fig, out_path)


def render_latency_bars(reports: list[LatencyReport], out_path: str | Path) -> Path:
    """Median per-sentence decode latency for each benchmarked config."""
    labels = [f"k={r.config['k']}" + (" +rescore" if r.config["rescore"] else "") for r in reports]
    medians = [r.median_ms for r in reports]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.2 * len(reports) + 2, 3))
        bars = ax.bar(labels, medians, color="tab:green", width=0.6)
        ax.bar_label(bars, fmt="%.1f ms", fontsize=8)
        ax.set_ylabel("median latency (ms/sentence)")
        speed = max(medians) / min(medians) if min(medians) > 0 else float("inf")
        ax.set_title(f"fastest/slowest ratio: {speed:.1f}x")
        return _save(fig, out_path)
