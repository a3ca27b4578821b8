"""Evaluation and the fixed-k transfer study.

evaluate_checkpoint scores a model on a test corpus: length-candidate parallel
decoding (optionally teacher-rescored), special stripping, corpus BLEU, and a
latency report. run_prelim_study trains one fresh model per training k on an
equal budget and cross-tests every model at each test k' >= its training k,
producing the train-k x test-k score matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .bleu import BleuReport, bleu
from .config import ExperimentConfig
from .corpus import Corpus, Vocab, build_vocab, gen_synthetic_corpus
from .curriculum import CurriculumSchedule
from .decode import (
    DecodeConfig,
    LatencyReport,
    clean_tokens,
    decode_batch,
    measure_latency,
    npd_decode,
)
from .model import K_N, ModelParams, format_k, parse_k
from .train import run_training

__all__ = [
    "EvalResult",
    "PrelimStudy",
    "decode_corpus",
    "evaluate_checkpoint",
    "generate_splits",
    "run_prelim_study",
]


@dataclass
class EvalResult:
    bleu: BleuReport
    latency: Optional[LatencyReport]
    hypotheses: list[str]
    candidates_per_sentence: int

    def to_json_dict(self) -> dict:
        return {
            "bleu": self.bleu.to_json_dict(),
            "latency": self.latency.to_json_dict() if self.latency else None,
            "candidates_per_sentence": self.candidates_per_sentence,
        }


def generate_splits(cfg: ExperimentConfig) -> dict[str, Corpus]:
    """The three corpus splits implied by the config's data block."""
    sizes = {
        "train": cfg["data.train_size"],
        "dev": cfg["data.dev_size"],
        "test": cfg["data.test_size"],
    }
    return {
        split: gen_synthetic_corpus(
            cfg["data.task"],
            size,
            cfg["data.vocab_size"],
            (cfg["data.len_min"], cfg["data.len_max"]),
            seed=cfg.seed,
            split=split,
        )
        for split, size in sizes.items()
    }


def decode_corpus(
    params: ModelParams,
    vocab: Vocab,
    corpus: Corpus,
    k,
    group_size: int = 128,
) -> list[str]:
    """Greedy decode every sentence at parallelism k with target length = M,
    cleaned of specials, as whitespace-joined strings."""
    k = parse_k(k)
    out: list[str] = []
    max_len = params.config.max_len
    pairs = list(corpus)
    for start in range(0, len(pairs), group_size):
        chunk = pairs[start : start + group_size]
        sources = [vocab.encode(p.src) for p in chunk]
        lengths = [min(len(x), max_len) for x in sources]
        hyps = decode_batch(params, sources, k, lengths, pad_id=vocab.pad_id)
        for h in hyps:
            out.append(" ".join(vocab.decode(clean_tokens(h.tokens, vocab.pad_id, vocab.eos_id))))
    return out


def evaluate_checkpoint(
    params: ModelParams,
    vocab: Vocab,
    test_corpus: Corpus,
    decode_cfg: DecodeConfig,
    teacher: Optional[ModelParams] = None,
    repeats: int = 3,
    measure: bool = True,
) -> EvalResult:
    references = [" ".join(p.tgt) for p in test_corpus]
    sources = [vocab.encode(p.src) for p in test_corpus]

    hypotheses: list[str] = []
    if decode_cfg.rescore:
        if teacher is None:
            raise ValueError("evaluate: rescoring decode requires a teacher checkpoint")
        for x in sources:
            hyp = npd_decode(params, teacher, x, decode_cfg, pad_id=vocab.pad_id, eos_id=vocab.eos_id)
            hypotheses.append(
                " ".join(vocab.decode(clean_tokens(hyp.tokens, vocab.pad_id, vocab.eos_id)))
            )
        candidates = 2 * decode_cfg.b + 1
    else:
        lengths = [min(len(x), decode_cfg.max_len) for x in sources]
        hyps = decode_batch(params, sources, K_N, lengths, pad_id=vocab.pad_id)
        hypotheses = [
            " ".join(vocab.decode(clean_tokens(h.tokens, vocab.pad_id, vocab.eos_id)))
            for h in hyps
        ]
        candidates = 1

    report = bleu(references, hypotheses)
    latency = (
        measure_latency(
            params, teacher, sources, decode_cfg, repeats=repeats,
            pad_id=vocab.pad_id, eos_id=vocab.eos_id,
        )
        if measure
        else None
    )
    return EvalResult(
        bleu=report,
        latency=latency,
        hypotheses=hypotheses,
        candidates_per_sentence=candidates,
    )


# ---------------------------------------------------------------------------
# fixed-k transfer study
# ---------------------------------------------------------------------------


def _rank(k) -> float:
    return math.inf if k is K_N else float(k)


@dataclass
class PrelimStudy:
    train_ks: list
    test_ks: list
    scores: dict = field(default_factory=dict)  # (test label, train label) -> float | None

    def get(self, test_k, train_k):
        return self.scores.get((format_k(parse_k(test_k)), format_k(parse_k(train_k))))

    def rows(self):
        """Test-k rows hardest first, matching the published matrix layout."""
        tests = sorted(self.test_ks, key=_rank, reverse=True)
        for t in tests:
            yield format_k(t), [self.get(t, k) for k in self.train_ks]

    def to_tsv(self) -> str:
        header = "test_k\\train_k\t" + "\t".join(format_k(k) for k in self.train_ks)
        lines = [header]
        for label, row in self.rows():
            cells = ["/" if v is None else f"{v:.2f}" for v in row]
            lines.append(label + "\t" + "\t".join(cells))
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "train_ks": [format_k(k) for k in self.train_ks],
            "test_ks": [format_k(k) for k in self.test_ks],
            "scores": {f"{t}|{k}": v for (t, k), v in sorted(self.scores.items())},
        }


def run_prelim_study(
    cfg: ExperimentConfig,
    train_ks,
    test_ks,
    out_dir: Optional[Path] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> PrelimStudy:
    """Train one fresh model per k on equal budgets; test each at every
    k' >= k. Cells with k' < k stay untested, like the published matrix."""
    train_ks = [parse_k(k) for k in train_ks]
    test_ks = [parse_k(k) for k in test_ks]
    splits = generate_splits(cfg)
    vocab = build_vocab(splits["train"])
    budget = cfg["prelim.steps"]
    say = progress or (lambda msg: None)

    study = PrelimStudy(train_ks=train_ks, test_ks=test_ks)
    for train_k in train_ks:
        say(f"training cell k={format_k(train_k)} for {budget} steps")
        schedule = CurriculumSchedule(steps_at=budget, steps_sat=0, steps_nat=0)
        result = run_training(
            cfg,
            vocab,
            splits["train"],
            tag=f"prelim_k{format_k(train_k)}",
            schedule=schedule,
            force_k=train_k,
            out_dir=out_dir,
        )
        for test_k in test_ks:
            if _rank(test_k) < _rank(train_k):
                continue
            hypotheses = decode_corpus(result.params, vocab, splits["test"], test_k)
            references = [" ".join(p.tgt) for p in splits["test"]]
            score = bleu(references, hypotheses).bleu
            study.scores[(format_k(test_k), format_k(train_k))] = score
            say(f"  test k'={format_k(test_k)}: BLEU {score:.2f}")
    return study
