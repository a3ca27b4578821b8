"""Corpus-level BLEU, multi-bleu compatible: modified n-gram precision with
clipping up to 4-grams, no smoothing, brevity penalty min(1, e^(1 - r/c)),
case sensitive over whitespace tokens. Reported on the 0-100 scale.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

__all__ = ["BleuReport", "bleu"]

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_length: int
    ref_length: int

    def to_json_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "hyp_length": self.hyp_length,
            "ref_length": self.ref_length,
        }


def _tokens(sentence) -> list[str]:
    if isinstance(sentence, str):
        return sentence.split()
    return [str(t) for t in sentence]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(references: Sequence, hypotheses: Sequence) -> BleuReport:
    """Corpus BLEU of hypotheses against one reference each.

    Sentences may be strings (whitespace-tokenized) or token sequences.
    Unsmoothed: any empty n-gram precision zeroes the score.
    """
    if len(hypotheses) == 0:
        raise ValueError("bleu: empty hypothesis list")
    if len(references) != len(hypotheses):
        raise ValueError(
            f"bleu: {len(references)} references vs {len(hypotheses)} hypotheses"
        )

    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for ref, hyp in zip(references, hypotheses):
        r, h = _tokens(ref), _tokens(hyp)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = _ngrams(h, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(r, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items()
            )

    precisions = tuple(
        (m / t) if t > 0 else 0.0 for m, t in zip(matches, totals)
    )
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)

    if any(p == 0.0 for p in precisions) or hyp_len == 0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER) * 100.0
    return BleuReport(
        bleu=score,
        precisions=precisions,
        brevity_penalty=bp,
        hyp_length=hyp_len,
        ref_length=ref_len,
    )
