"""BLEU against a deliberately naive brute-force counting oracle."""

import math
import random

import pytest

from paratrans.bleu import bleu


def oracle_bleu(references, hypotheses):
    """Independent BLEU: quadratic list-based n-gram counting, no Counter."""
    matches = [0, 0, 0, 0]
    totals = [0, 0, 0, 0]
    hyp_len = ref_len = 0
    for ref, hyp in zip(references, hypotheses):
        r = ref.split() if isinstance(ref, str) else list(ref)
        h = hyp.split() if isinstance(hyp, str) else list(hyp)
        hyp_len += len(h)
        ref_len += len(r)
        for n in (1, 2, 3, 4):
            hgrams = [tuple(h[i : i + n]) for i in range(len(h) - n + 1)]
            rgrams = [tuple(r[i : i + n]) for i in range(len(r) - n + 1)]
            totals[n - 1] += len(hgrams)
            for gram in set(hgrams):
                matches[n - 1] += min(hgrams.count(gram), rgrams.count(gram))
    ps = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        return 0.0, ps, 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    if any(p == 0 for p in ps):
        return 0.0, ps, bp
    return bp * math.exp(sum(math.log(p) for p in ps) / 4) * 100, ps, bp


def test_perfect_match_scores_100():
    refs = ["the quick brown fox jumps over the lazy dog"] * 3
    report = bleu(refs, refs)
    assert report.bleu == pytest.approx(100.0)
    assert report.brevity_penalty == 1.0
    assert report.precisions == (1.0, 1.0, 1.0, 1.0)


def test_hand_counted_example():
    # p = (5/5, 3/4, 2/3, 1/2), BP = e^-0.2; hand-computed value 57.893
    report = bleu(["the cat sat on the mat"], ["the cat sat on mat"])
    assert report.precisions == (1.0, 0.75, 2.0 / 3.0, 0.5)
    assert report.brevity_penalty == pytest.approx(math.exp(-0.2))
    assert report.bleu == pytest.approx(57.89300674674098, abs=1e-9)
    assert round(report.bleu, 2) == 57.89
    assert (report.hyp_length, report.ref_length) == (5, 6)


def test_no_fourgram_overlap_scores_zero():
    report = bleu(["a b c d e"], ["a b x d e"])
    assert report.precisions[3] == 0.0
    assert report.bleu == 0.0


def test_longer_hypothesis_has_no_brevity_penalty():
    report = bleu(["a b"], ["a b c d e"])
    assert report.brevity_penalty == 1.0


def test_empty_hypothesis_list_rejected():
    with pytest.raises(ValueError, match="empty"):
        bleu([], [])
    with pytest.raises(ValueError, match="references"):
        bleu(["a"], ["a", "b"])


def test_matches_oracle_on_random_corpora():
    rng = random.Random(1234)
    vocab = [f"t{i}" for i in range(12)]
    for case in range(100):
        n_sent = rng.randint(1, 6)
        refs, hyps = [], []
        for _ in range(n_sent):
            r = [rng.choice(vocab) for _ in range(rng.randint(1, 12))]
            # hypotheses correlate with references so precisions are non-trivial
            h = [t if rng.random() < 0.7 else rng.choice(vocab) for t in r]
            if rng.random() < 0.3 and len(h) > 1:
                h = h[: rng.randint(1, len(h))]
            refs.append(" ".join(r))
            hyps.append(" ".join(h))
        report = bleu(refs, hyps)
        expect_bleu, expect_ps, expect_bp = oracle_bleu(refs, hyps)
        assert report.bleu == pytest.approx(expect_bleu, abs=1e-9), case
        assert report.precisions == pytest.approx(tuple(expect_ps), abs=1e-12)
        assert report.brevity_penalty == pytest.approx(expect_bp, abs=1e-12)
