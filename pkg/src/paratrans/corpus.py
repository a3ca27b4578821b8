"""Synthetic parallel corpora, vocabulary, batching, and teacher distillation.

Three deterministic toy transduction tasks stand in for real bitext at desk
scale: copy (y = x), reverse, and mapped-swap (a seeded token permutation
composed with adjacent-pair swapping, i.e. lexical mapping plus local
reordering). Corpora are pure functions of (task, size, vocab size, length
range, seed); train/dev/test draw from per-split child seeds while sharing
one token mapping.

Files are plain text, one sentence per line of space-separated tokens, as
`<prefix>.src` / `<prefix>.tgt` with a `<prefix>.meta.json` sidecar.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .decode import DecodeConfig, clean_tokens, decode_batch
from .model import ModelParams

log = logging.getLogger(__name__)

__all__ = [
    "PAD", "EOS", "UNK", "TASK_KINDS",
    "Vocab", "SentencePair", "Corpus", "Batch",
    "gen_synthetic_corpus", "mapped_swap_transform", "build_vocab",
    "batch", "distill", "save_corpus", "load_corpus", "read_token_lines",
]

PAD = "<pad>"
EOS = "</s>"
UNK = "<unk>"
SPECIALS = (PAD, EOS, UNK)

TASK_KINDS = ("copy", "reverse", "mapped-swap")

_SPLIT_CHILD = {"train": 1, "dev": 2, "test": 3}


class Vocab:
    """Token <-> id bijection with pad/eos/unk specials at ids 0/1/2."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:3]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("Vocab: duplicate tokens")

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Iterable[str]) -> list[int]:
        unk = self.unk_id
        return [self.index.get(w, unk) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SentencePair:
    src: tuple[str, ...]
    tgt: tuple[str, ...]

    def __post_init__(self):
        if not self.src or not self.tgt:
            raise ValueError("SentencePair: sides must be non-empty")
        if PAD in self.src or PAD in self.tgt:
            raise ValueError("SentencePair: pad token inside a sentence")


@dataclass
class Corpus:
    pairs: list[SentencePair]
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def _content_tokens(vocab_size: int) -> list[str]:
    n = vocab_size - len(SPECIALS)
    width = max(2, len(str(n - 1)))
    return [f"w{i:0{width}d}" for i in range(n)]


def mapped_swap_transform(tokens: Sequence[str], mapping: dict[str, str]) -> tuple[str, ...]:
    """Apply a token mapping, then swap each adjacent pair (odd tail stays)."""
    mapped = [mapping.get(t, t) for t in tokens]
    for j in range(0, len(mapped) - 1, 2):
        mapped[j], mapped[j + 1] = mapped[j + 1], mapped[j]
    return tuple(mapped)


def gen_synthetic_corpus(
    task_kind: str,
    size: int,
    vocab_size: int,
    len_range: tuple[int, int],
    seed: int,
    split: str = "train",
) -> Corpus:
    """Deterministic synthetic corpus; splits use disjoint child seeds of
    `seed` while the mapped-swap token permutation depends on `seed` alone."""
    if task_kind not in TASK_KINDS:
        raise ValueError(f"unknown task kind {task_kind!r}; expected one of {TASK_KINDS}")
    if split not in _SPLIT_CHILD:
        raise ValueError(f"unknown split {split!r}")
    lo, hi = int(len_range[0]), int(len_range[1])
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid length range {len_range}")
    if vocab_size <= len(SPECIALS):
        raise ValueError(f"vocab_size must exceed the {len(SPECIALS)} specials")
    if size < 1:
        raise ValueError("size must be >= 1")

    words = _content_tokens(vocab_size)
    children = np.random.SeedSequence(seed).spawn(4)
    mapping: dict[str, str] = {}
    if task_kind == "mapped-swap":
        perm = np.random.default_rng(children[0]).permutation(len(words))
        mapping = {words[i]: words[perm[i]] for i in range(len(words))}
    rng = np.random.default_rng(children[_SPLIT_CHILD[split]])

    pairs = []
    for _ in range(size):
        n = int(rng.integers(lo, hi + 1))
        src = tuple(words[i] for i in rng.integers(0, len(words), size=n))
        if task_kind == "copy":
            tgt = src
        elif task_kind == "reverse":
            tgt = tuple(reversed(src))
        else:
            tgt = mapped_swap_transform(src, mapping)
        pairs.append(SentencePair(src=src, tgt=tgt))

    meta = {
        "task": task_kind,
        "split": split,
        "size": size,
        "vocab_size": vocab_size,
        "len_range": [lo, hi],
        "seed": int(seed),
    }
    return Corpus(pairs=pairs, split=split, meta=meta)


def build_vocab(corpus: Corpus) -> Vocab:
    """Shared source/target vocabulary over every token in the corpus."""
    if not corpus.pairs:
        raise ValueError("build_vocab: empty corpus")
    seen = set()
    for pair in corpus.pairs:
        seen.update(pair.src)
        seen.update(pair.tgt)
    return Vocab(list(SPECIALS) + sorted(seen - set(SPECIALS)))


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    src: np.ndarray  # (B, M) int64, padded
    src_lens: list[int]
    tgt: np.ndarray  # (B, N) int64, padded; eos-terminated when append_eos
    tgt_lens: list[int]
    indices: list[int]  # positions of the pairs in the corpus

    @property
    def n_target_tokens(self) -> int:
        return int(sum(self.tgt_lens))


def batch(
    corpus: Corpus,
    vocab: Vocab,
    max_tokens: int,
    seed: int,
    append_eos: bool = True,
) -> list[Batch]:
    """Length-bucketed padded batches covering every pair exactly once.

    Pairs are packed by padded footprint (rows x widest sentence <= max_tokens)
    after sorting by length, and the batch order is shuffled by `seed`.
    """
    eos_extra = 1 if append_eos else 0
    costs = []
    for i, pair in enumerate(corpus.pairs):
        cost = max(len(pair.src), len(pair.tgt) + eos_extra)
        if cost > max_tokens:
            raise ValueError(f"sentence {i} needs {cost} tokens > max_tokens {max_tokens}")
        costs.append(cost)

    order = sorted(range(len(corpus.pairs)), key=lambda i: (costs[i], len(corpus.pairs[i].src), i))
    groups: list[list[int]] = []
    current: list[int] = []
    width = 0
    for i in order:
        new_width = max(width, costs[i])
        if current and new_width * (len(current) + 1) > max_tokens:
            groups.append(current)
            current, width = [], 0
            new_width = costs[i]
        current.append(i)
        width = new_width
    if current:
        groups.append(current)

    rng = np.random.default_rng(seed)
    rng.shuffle(groups)

    pad = vocab.pad_id
    batches = []
    for group in groups:
        srcs = [vocab.encode(corpus.pairs[i].src) for i in group]
        tgts = [vocab.encode(corpus.pairs[i].tgt) + ([vocab.eos_id] if append_eos else []) for i in group]
        m = max(len(s) for s in srcs)
        n = max(len(t) for t in tgts)
        src = np.full((len(group), m), pad, dtype=np.int64)
        tgt = np.full((len(group), n), pad, dtype=np.int64)
        for b, (s, t) in enumerate(zip(srcs, tgts)):
            src[b, : len(s)] = s
            tgt[b, : len(t)] = t
        batches.append(
            Batch(
                src=src,
                src_lens=[len(s) for s in srcs],
                tgt=tgt,
                tgt_lens=[len(t) for t in tgts],
                indices=list(group),
            )
        )
    return batches


# ---------------------------------------------------------------------------
# sequence-level distillation
# ---------------------------------------------------------------------------


def distill(
    teacher: ModelParams,
    corpus: Corpus,
    vocab: Vocab,
    decode_cfg: Optional[DecodeConfig] = None,
    group_size: int = 64,
) -> Corpus:
    """Replace every target with the teacher's greedy left-to-right decode.

    Sources are preserved exactly; the decode length is M+1 so the teacher can
    close a sentence with eos (targets were trained eos-terminated). An empty
    decode falls back to a bare eos sentence with a warning.
    """
    max_len = decode_cfg.max_len if decode_cfg is not None else teacher.config.max_len
    new_pairs: list[Optional[SentencePair]] = [None] * len(corpus.pairs)
    empty = 0
    for start in range(0, len(corpus.pairs), group_size):
        chunk = list(range(start, min(start + group_size, len(corpus.pairs))))
        sources = [vocab.encode(corpus.pairs[i].src) for i in chunk]
        lengths = [min(len(x) + 1, max_len) for x in sources]
        hyps = decode_batch(teacher, sources, 1, lengths, pad_id=vocab.pad_id)
        for i, hyp in zip(chunk, hyps):
            ids = clean_tokens(hyp.tokens, vocab.pad_id, vocab.eos_id)
            if not ids:
                empty += 1
                ids = [vocab.eos_id]
            new_pairs[i] = SentencePair(src=corpus.pairs[i].src, tgt=tuple(vocab.decode(ids)))
    if empty:
        log.warning("distill: %d teacher decodes were empty; replaced with eos", empty)
    meta = dict(corpus.meta)
    meta["distilled"] = True
    return Corpus(pairs=list(new_pairs), split=corpus.split, meta=meta)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def save_corpus(corpus: Corpus, prefix: str | Path) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{prefix}.src", "w") as fs, open(f"{prefix}.tgt", "w") as ft:
        for pair in corpus.pairs:
            fs.write(" ".join(pair.src) + "\n")
            ft.write(" ".join(pair.tgt) + "\n")
    with open(f"{prefix}.meta.json", "w") as fm:
        json.dump(corpus.meta, fm, sort_keys=True, indent=2)
        fm.write("\n")


def read_token_lines(path: str | Path) -> list[tuple[str, ...]]:
    with open(path) as f:
        return [tuple(line.split()) for line in f if line.strip()]


def load_corpus(prefix: str | Path, split: Optional[str] = None) -> Corpus:
    prefix = Path(prefix)
    src_path, tgt_path = Path(f"{prefix}.src"), Path(f"{prefix}.tgt")
    if not src_path.exists() or not tgt_path.exists():
        raise FileNotFoundError(f"corpus files {prefix}.src/.tgt not found")
    srcs = read_token_lines(src_path)
    tgts = read_token_lines(tgt_path)
    if len(srcs) != len(tgts):
        raise ValueError(f"corpus {prefix}: {len(srcs)} source vs {len(tgts)} target lines")
    meta_path = Path(f"{prefix}.meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Corpus(
        pairs=[SentencePair(src=s, tgt=t) for s, t in zip(srcs, tgts)],
        split=split or meta.get("split", "train"),
        meta=meta,
    )
