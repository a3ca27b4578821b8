"""Synthetic generators, vocabulary, batching, and distillation."""

import numpy as np
import pytest

from paratrans import corpus as C
from paratrans.model import ModelConfig, batch_nll, init_params
from paratrans.optim import OptimizerState, adam_step


def pairs_equal(a, b):
    return len(a.pairs) == len(b.pairs) and all(
        x.src == y.src and x.tgt == y.tgt for x, y in zip(a.pairs, b.pairs)
    )


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def test_copy_task_identity():
    corp = C.gen_synthetic_corpus("copy", 20, 16, (2, 5), seed=0)
    for pair in corp.pairs:
        assert pair.tgt == pair.src


def test_reverse_task():
    corp = C.gen_synthetic_corpus("reverse", 20, 16, (2, 5), seed=0)
    for pair in corp.pairs:
        assert pair.tgt == tuple(reversed(pair.src))


def test_mapped_swap_with_identity_mapping():
    assert C.mapped_swap_transform(("a", "b", "c", "d"), {}) == ("b", "a", "d", "c")
    assert C.mapped_swap_transform(("a", "b", "c"), {}) == ("b", "a", "c")


def test_mapped_swap_structure():
    corp = C.gen_synthetic_corpus("mapped-swap", 50, 32, (2, 8), seed=3)
    # recover the token mapping from the swap rule, then check it is total
    mapping = {}
    for pair in corp.pairs:
        n = len(pair.src)
        for j in range(0, n - 1, 2):
            mapping.setdefault(pair.src[j], pair.tgt[j + 1])
            mapping.setdefault(pair.src[j + 1], pair.tgt[j])
        if n % 2:
            mapping.setdefault(pair.src[-1], pair.tgt[-1])
    for pair in corp.pairs:
        assert pair.tgt == C.mapped_swap_transform(pair.src, mapping)
    # same seed, different split: same mapping, different sentences
    test_corp = C.gen_synthetic_corpus("mapped-swap", 50, 32, (2, 8), seed=3, split="test")
    for pair in test_corp.pairs:
        assert pair.tgt == C.mapped_swap_transform(pair.src, mapping)


def test_generator_is_pure():
    a = C.gen_synthetic_corpus("mapped-swap", 30, 24, (2, 6), seed=11)
    b = C.gen_synthetic_corpus("mapped-swap", 30, 24, (2, 6), seed=11)
    assert pairs_equal(a, b)


def test_splits_differ():
    a = C.gen_synthetic_corpus("copy", 30, 24, (2, 6), seed=11, split="train")
    b = C.gen_synthetic_corpus("copy", 30, 24, (2, 6), seed=11, split="dev")
    assert not pairs_equal(a, b)


def test_generator_rejects_bad_args():
    with pytest.raises(ValueError, match="task"):
        C.gen_synthetic_corpus("sort", 10, 16, (2, 5), seed=0)
    with pytest.raises(ValueError, match="length"):
        C.gen_synthetic_corpus("copy", 10, 16, (5, 2), seed=0)
    with pytest.raises(ValueError, match="vocab"):
        C.gen_synthetic_corpus("copy", 10, 3, (2, 5), seed=0)


# ---------------------------------------------------------------------------
# vocab
# ---------------------------------------------------------------------------


def test_vocab_counts_specials():
    corp = C.Corpus(pairs=[C.SentencePair(("a", "b"), ("b", "a"))])
    vocab = C.build_vocab(corp)
    assert len(vocab) == 2 + 3


def test_vocab_roundtrip():
    corp = C.gen_synthetic_corpus("mapped-swap", 40, 20, (2, 7), seed=5)
    vocab = C.build_vocab(corp)
    for pair in corp.pairs:
        assert tuple(vocab.decode(vocab.encode(pair.src))) == pair.src
        assert tuple(vocab.decode(vocab.encode(pair.tgt))) == pair.tgt


def test_unknown_token_maps_to_unk():
    vocab = C.build_vocab(C.Corpus(pairs=[C.SentencePair(("a",), ("a",))]))
    assert vocab.encode(["never-seen"]) == [vocab.unk_id]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_corpus():
    return C.gen_synthetic_corpus("copy", 10, 16, (2, 5), seed=9)


def test_single_bucket_when_budget_is_huge(small_corpus):
    vocab = C.build_vocab(small_corpus)
    batches = C.batch(small_corpus, vocab, max_tokens=10_000, seed=0)
    assert len(batches) == 1
    assert len(batches[0].indices) == 10


def test_batches_partition_corpus(small_corpus):
    vocab = C.build_vocab(small_corpus)
    batches = C.batch(small_corpus, vocab, max_tokens=12, seed=0)
    seen = sorted(i for b in batches for i in b.indices)
    assert seen == list(range(10))


def test_batch_order_is_seeded(small_corpus):
    vocab = C.build_vocab(small_corpus)
    a = C.batch(small_corpus, vocab, max_tokens=12, seed=4)
    b = C.batch(small_corpus, vocab, max_tokens=12, seed=4)
    c = C.batch(small_corpus, vocab, max_tokens=12, seed=5)
    assert [x.indices for x in a] == [x.indices for x in b]
    assert [x.indices for x in a] != [x.indices for x in c]


def test_batch_contents(small_corpus):
    vocab = C.build_vocab(small_corpus)
    (b,) = C.batch(small_corpus, vocab, max_tokens=10_000, seed=0)
    for row, i in enumerate(b.indices):
        pair = small_corpus.pairs[i]
        assert list(b.src[row, : b.src_lens[row]]) == vocab.encode(pair.src)
        ids = vocab.encode(pair.tgt) + [vocab.eos_id]
        assert list(b.tgt[row, : b.tgt_lens[row]]) == ids
        assert (b.src[row, b.src_lens[row] :] == vocab.pad_id).all()


def test_oversized_sentence_names_index(small_corpus):
    vocab = C.build_vocab(small_corpus)
    longest = max(range(10), key=lambda i: len(small_corpus.pairs[i].tgt))
    with pytest.raises(ValueError, match=f"sentence {longest}"):
        C.batch(small_corpus, vocab, max_tokens=len(small_corpus.pairs[longest].tgt), seed=0)


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------


def train_tiny_teacher(corp, vocab, steps=250, seed=0):
    cfg = ModelConfig(
        d_model=32, d_hidden=64, n_layer=1, n_head=2,
        vocab_size=len(vocab), max_len=16, label_smoothing=0.0,
    )
    params = init_params(cfg, seed=seed)
    state = OptimizerState(d_model=cfg.d_model, warmup_steps=100)
    batches = C.batch(corp, vocab, max_tokens=256, seed=seed)
    loss = float("inf")
    for step in range(steps):
        b = batches[step % len(batches)]
        params.zero_grads()
        out = batch_nll(params, b.src, b.src_lens, b.tgt, b.tgt_lens, 1, vocab.pad_id)
        out.backward(inputs=list(params.tensors.values()))
        adam_step(params.tensors, params.grads(), state)
        loss = out.item()
    return params, loss


@pytest.fixture(scope="module")
def memorizing_teacher():
    corp = C.gen_synthetic_corpus("copy", 80, 13, (2, 5), seed=21)
    vocab = C.build_vocab(corp)
    params, loss = train_tiny_teacher(corp, vocab)
    return corp, vocab, params, loss


def test_distill_preserves_sources_and_size(memorizing_teacher):
    corp, vocab, params, _ = memorizing_teacher
    out = C.distill(params, corp, vocab)
    assert len(out) == len(corp)
    for a, b in zip(corp.pairs, out.pairs):
        assert a.src == b.src


def test_distill_of_memorizing_teacher_reproduces_targets(memorizing_teacher):
    corp, vocab, params, loss = memorizing_teacher
    assert loss < 0.01, "teacher failed to memorize the copy task"
    out = C.distill(params, corp, vocab)
    same = sum(a.tgt == b.tgt for a, b in zip(corp.pairs, out.pairs))
    assert same / len(corp) >= 0.99


def test_distill_twice_is_identical(memorizing_teacher):
    corp, vocab, params, _ = memorizing_teacher
    a = C.distill(params, corp, vocab)
    b = C.distill(params, corp, vocab)
    assert pairs_equal(a, b)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def test_corpus_files_roundtrip(tmp_path, small_corpus):
    prefix = tmp_path / "data" / "toy.train"
    C.save_corpus(small_corpus, prefix)
    loaded = C.load_corpus(prefix)
    assert pairs_equal(loaded, small_corpus)
    assert loaded.meta["task"] == "copy"


def test_load_missing_corpus_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        C.load_corpus(tmp_path / "nope")
