"""Group-by-group decoding, length-candidate parallel decoding, and latency.

decode_k emits ceil(N/k) groups of k adjacent tokens; k=1 is classic greedy
left-to-right decoding and k=N emits the whole sentence in one pass. Noisy
parallel decoding (npd_decode) decodes one fully-parallel candidate per target
length in [M-B, M+B] and keeps the candidate a left-to-right teacher scores
highest (length-normalized). All decoding is greedy and deterministic.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .model import (
    K_N,
    ModelParams,
    build_decoder_input,
    decoder_forward_batch,
    decoder_self_mask,
    effective_k,
    encode_batch,
    format_k,
    pad_key_mask,
    parse_k,
)

log = logging.getLogger(__name__)

__all__ = [
    "DecodeConfig",
    "Hypothesis",
    "LatencyReport",
    "clean_tokens",
    "decode_k",
    "decode_batch",
    "npd_decode",
    "rescore",
    "measure_latency",
    "n_passes",
]


@dataclass(frozen=True)
class DecodeConfig:
    k: object = K_N  # parallelism degree (int or the N sentinel)
    b: int = 0  # half-window of target-length candidates
    rescore: bool = False
    max_len: int = 64

    def __post_init__(self):
        object.__setattr__(self, "k", parse_k(self.k))
        if self.b < 0:
            raise ValueError("DecodeConfig: b must be >= 0")
        if self.max_len < 1:
            raise ValueError("DecodeConfig: max_len must be >= 1")

    def describe(self) -> dict:
        return {"k": format_k(self.k), "b": self.b, "rescore": self.rescore, "max_len": self.max_len}


@dataclass
class Hypothesis:
    tokens: list[int]
    model_score: float
    length: int
    teacher_score: Optional[float] = None


@dataclass
class LatencyReport:
    config: dict
    median_ms: float
    passes_total: int
    tokens_per_sec: float
    per_sentence_ms: list[float] = field(default_factory=list)
    passes: list[int] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "median_ms": self.median_ms,
            "passes_total": self.passes_total,
            "tokens_per_sec": self.tokens_per_sec,
            "per_sentence_ms": self.per_sentence_ms,
            "passes": self.passes,
        }


def n_passes(n: int, k) -> int:
    """Decoder forward passes needed for one sentence: ceil(n / effective k)."""
    return math.ceil(n / effective_k(k, n))


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def clean_tokens(tokens: Sequence[int], pad_id: Optional[int], eos_id: Optional[int]) -> list[int]:
    """Drop pad tokens anywhere, then strip trailing end-of-sentence markers."""
    out = [t for t in tokens if pad_id is None or t != pad_id]
    if eos_id is not None:
        while out and out[-1] == eos_id:
            out.pop()
    return out


def decode_batch(
    params: ModelParams,
    sources: Sequence[Sequence[int]],
    k,
    lengths: Sequence[int],
    pad_id: int = 0,
) -> list[Hypothesis]:
    """Greedy group-by-group decode of a batch; sentence b gets lengths[b]
    output tokens at its own effective k. Lockstep over groups: outer pass t
    emits group t of every unfinished sentence."""
    k = parse_k(k)
    if len(sources) != len(lengths):
        raise ValueError("decode_batch: sources and lengths disagree")
    if not sources:
        return []
    lengths = [int(n) for n in lengths]
    if min(lengths) < 1:
        raise ValueError("decode_batch: target lengths must be >= 1")
    width = max(lengths)
    if width > params.config.max_len:
        raise ValueError(f"decode_batch: target length {width} exceeds max_len {params.config.max_len}")
    bsz = len(sources)
    src_lens = [len(x) for x in sources]
    if min(src_lens) < 1:
        raise ValueError("decode_batch: empty source sentence")
    m_width = max(src_lens)
    src = np.full((bsz, m_width), pad_id, dtype=np.int64)
    for b, x in enumerate(sources):
        src[b, : len(x)] = x

    kk = [effective_k(k, n) for n in lengths]
    total_passes = max(math.ceil(n / e) for n, e in zip(lengths, kk))
    y_buf = np.full((bsz, width), pad_id, dtype=np.int64)
    scores = np.zeros(bsz)

    with T.no_grad():
        enc = encode_batch(params, src, src_lens)
        self_mask = decoder_self_mask(k, lengths, width)
        cross_mask = pad_key_mask(src_lens, m_width)
        for t in range(total_passes):
            dec_in = np.full((bsz, width), pad_id, dtype=np.int64)
            for b in range(bsz):
                n_b = lengths[b]
                dec_in[b, :n_b] = build_decoder_input(
                    sources[b], kk[b], n_b, y_buf[b, : max(0, n_b - kk[b])]
                )
            logits = decoder_forward_batch(params, dec_in, enc, self_mask, cross_mask).data
            for b in range(bsz):
                lo = t * kk[b]
                hi = min(lo + kk[b], lengths[b])
                if lo >= hi:
                    continue
                logp = log_softmax_np(logits[b, lo:hi])
                picks = logp.argmax(axis=-1)
                y_buf[b, lo:hi] = picks
                scores[b] += logp[np.arange(hi - lo), picks].sum()

    return [
        Hypothesis(tokens=list(map(int, y_buf[b, : lengths[b]])), model_score=float(scores[b]), length=lengths[b])
        for b in range(bsz)
    ]


def decode_k(params: ModelParams, x: Sequence[int], k, n: int, pad_id: int = 0) -> Hypothesis:
    """Decode one sentence to exactly n tokens at parallelism k."""
    if n < 1:
        raise ValueError("decode_k: target length must be >= 1")
    return decode_batch(params, [list(x)], k, [n], pad_id=pad_id)[0]


def rescore(
    teacher: ModelParams,
    x: Sequence[int],
    candidates: Sequence[Sequence[int]],
    pad_id: int = 0,
) -> list[float]:
    """Length-normalized left-to-right teacher log-probability per candidate."""
    cands = [list(c.tokens) if isinstance(c, Hypothesis) else list(c) for c in candidates]
    if not cands:
        return []
    lengths = [len(c) for c in cands]
    if min(lengths) < 1:
        raise ValueError("rescore: empty candidate")
    width = max(lengths)
    bsz = len(cands)
    x = list(x)
    src = np.tile(np.asarray(x, dtype=np.int64), (bsz, 1))
    src_lens = [len(x)] * bsz
    dec_in = np.full((bsz, width), pad_id, dtype=np.int64)
    tgt = np.full((bsz, width), pad_id, dtype=np.int64)
    for b, c in enumerate(cands):
        dec_in[b, : lengths[b]] = build_decoder_input(x, 1, lengths[b], c)
        tgt[b, : lengths[b]] = c
    with T.no_grad():
        enc = encode_batch(teacher, src, src_lens)
        logits = decoder_forward_batch(
            teacher,
            dec_in,
            enc,
            decoder_self_mask(1, lengths, width),
            pad_key_mask(src_lens, len(x)),
        ).data
    logp = log_softmax_np(logits)
    out = []
    for b in range(bsz):
        rows = np.arange(lengths[b])
        out.append(float(logp[b, rows, tgt[b, : lengths[b]]].sum() / lengths[b]))
    return out


def npd_decode(
    params: ModelParams,
    teacher: Optional[ModelParams],
    x: Sequence[int],
    cfg: DecodeConfig,
    pad_id: int = 0,
    eos_id: Optional[int] = None,
    return_candidates: bool = False,
):
    """Length-candidate parallel decoding: one fully-parallel candidate per
    target length in [M-B, M+B] (2B+1 of them, clipped to >= 1), picked by
    teacher rescoring; without rescoring, just the single N=M candidate.

    Returns the selected Hypothesis, or (selected, candidates) when
    return_candidates is set."""
    x = list(x)
    m = len(x)
    if not cfg.rescore:
        hyp = decode_k(params, x, K_N, min(m, cfg.max_len), pad_id=pad_id)
        return (hyp, [hyp]) if return_candidates else hyp
    if teacher is None:
        raise ValueError("npd_decode: rescoring requires a teacher model")
    lengths = [max(1, n) for n in range(m - cfg.b, m + cfg.b + 1)]
    lengths = [min(n, cfg.max_len) for n in lengths]
    hyps = decode_batch(params, [x] * len(lengths), K_N, lengths, pad_id=pad_id)
    scores = rescore(teacher, x, hyps, pad_id=pad_id)
    for h, s in zip(hyps, scores):
        h.teacher_score = s
    stripped = [clean_tokens(h.tokens, pad_id, eos_id) for h in hyps]
    if eos_id is not None and all(len(s) == 0 for s in stripped):
        log.warning("npd_decode: every candidate stripped to nothing; emitting eos")
        fallback = Hypothesis(tokens=[eos_id], model_score=float("-inf"), length=1, teacher_score=None)
        return (fallback, hyps) if return_candidates else fallback
    order = sorted(
        range(len(hyps)),
        key=lambda i: (-hyps[i].teacher_score, len(stripped[i]), hyps[i].length, i),
    )
    selected = hyps[order[0]]
    return (selected, hyps) if return_candidates else selected


def measure_latency(
    params: ModelParams,
    teacher: Optional[ModelParams],
    testset: Sequence[Sequence[int]],
    cfg: DecodeConfig,
    repeats: int = 5,
    pad_id: int = 0,
    eos_id: Optional[int] = None,
) -> LatencyReport:
    """Per-sentence wall-clock decode times; median over `repeats` timed runs
    after one untimed warmup pass. Pass counts are exact ceil(N/k)."""
    if repeats < 3:
        raise ValueError("measure_latency: repeats must be >= 3")
    if not testset:
        raise ValueError("measure_latency: empty testset")

    def run(x):
        if cfg.rescore or cfg.b > 0:
            return npd_decode(params, teacher, x, cfg, pad_id=pad_id, eos_id=eos_id)
        return decode_k(params, x, cfg.k, min(len(x), cfg.max_len), pad_id=pad_id)

    for x in testset[: min(3, len(testset))]:
        run(x)  # warmup, excluded from timing

    times = np.zeros((len(testset), repeats))
    out_lengths = []
    for r in range(repeats):
        for i, x in enumerate(testset):
            t0 = time.perf_counter()
            hyp = run(x)
            times[i, r] = (time.perf_counter() - t0) * 1000.0
            if r == 0:
                out_lengths.append(hyp.length)

    per_sentence = np.median(times, axis=1)
    passes = [n_passes(n, cfg.k) for n in out_lengths]
    total_s = per_sentence.sum() / 1000.0
    return LatencyReport(
        config=cfg.describe(),
        median_ms=float(np.median(per_sentence)),
        passes_total=int(sum(passes)),
        tokens_per_sec=float(sum(out_lengths) / total_s) if total_s > 0 else float("inf"),
        per_sentence_ms=[float(v) for v in per_sentence],
        passes=passes,
    )
