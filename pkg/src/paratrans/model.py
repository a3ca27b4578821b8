"""Transformer encoder-decoder with a group-parallel (causal-k) decoder.

One model covers the whole decoding spectrum through a single parallelism
degree k: k=1 is ordinary left-to-right decoding, k >= target length is fully
parallel decoding, anything between emits k adjacent tokens per step. The two
ingredients are the causal-k self-attention mask (position p may attend to
positions q <= ceil(p/k)*k) and the k-shifted decoder input, whose first k
slots carry copies of the source tokens instead of a begin symbol.

All math runs on the autograd Tensors from .tensor; forward passes over a
frozen parameter set are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .tensor import (
    Tensor,
    add,
    cross_entropy,
    embedding,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)

__all__ = [
    "K_N",
    "parse_k",
    "format_k",
    "effective_k",
    "ModelConfig",
    "ModelParams",
    "init_params",
    "CausalKMask",
    "build_causal_k_mask",
    "build_decoder_input",
    "encode",
    "encode_batch",
    "decoder_forward",
    "decoder_forward_batch",
    "teacher_forced_nll",
    "batch_nll",
    "pad_key_mask",
    "decoder_self_mask",
]

MASK_NEG = -1e9  # additive pre-softmax mask value standing in for -inf


class _FullParallel:
    """Sentinel for k = N: per-sentence full parallelism."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "N"

    def __deepcopy__(self, memo):
        return self

    def __copy__(self):
        return self


K_N = _FullParallel()


def parse_k(text) -> "int | _FullParallel":
    """Parse a parallelism degree from config/CLI text ('N' or a positive int)."""
    if isinstance(text, _FullParallel):
        return K_N
    if isinstance(text, int):
        k = text
    else:
        s = str(text).strip()
        if s.upper() == "N":
            return K_N
        k = int(s)
    if k < 1:
        raise ValueError(f"parallelism degree must be >= 1 or 'N', got {text!r}")
    return k


def format_k(k) -> str:
    return "N" if k is K_N else str(int(k))


def effective_k(k, n: int) -> int:
    """Per-sentence parallelism: a sentence shorter than k trains/decodes fully parallel."""
    if k is K_N:
        return n
    return min(int(k), n)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    d_hidden: int
    n_layer: int
    n_head: int
    vocab_size: int
    max_len: int
    dropout: float = 0.0
    label_smoothing: float = 0.1

    def __post_init__(self):
        if min(self.d_model, self.d_hidden, self.n_layer, self.n_head, self.vocab_size, self.max_len) <= 0:
            raise ValueError("ModelConfig: all dimensions must be positive")
        if self.d_model % self.n_head:
            raise ValueError(f"ModelConfig: d_model {self.d_model} not divisible by n_head {self.n_head}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("ModelConfig: dropout must be in [0, 1)")


class ModelParams:
    """All model weights as an ordered name -> Tensor mapping plus the config."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors.keys())

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.tensors.items()
        }

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())


def _layer_names(kind: str, i: int) -> list[str]:
    pfx = f"{kind}{i}"
    names = [f"{pfx}.ln1.g", f"{pfx}.ln1.b"]
    attns = ["self"] if kind == "enc" else ["self", "cross"]
    for j, a in enumerate(attns):
        for w in ("wq", "wk", "wv", "wo"):
            names.append(f"{pfx}.{a}.{w}")
        for b in ("bq", "bk", "bv", "bo"):
            names.append(f"{pfx}.{a}.{b}")
        names.append(f"{pfx}.ln{j + 2}.g")
        names.append(f"{pfx}.ln{j + 2}.b")
    names += [f"{pfx}.ff.w1", f"{pfx}.ff.b1", f"{pfx}.ff.w2", f"{pfx}.ff.b2"]
    return names


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded parameter initialization: Xavier-uniform linears, unit LN gains,
    shared source/target embedding scaled for the sqrt(d_model) multiplier."""
    rng = np.random.default_rng(seed)
    d, dh, v = config.d_model, config.d_hidden, config.vocab_size
    tensors: dict[str, Tensor] = {}

    def xavier(fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-lim, lim, size=(fan_in, fan_out)))

    def zeros(*shape):
        return Tensor(np.zeros(shape))

    def ones(*shape):
        return Tensor(np.ones(shape))

    tensors["embed"] = Tensor(rng.normal(0.0, d ** -0.5, size=(v, d)))
    for kind, attn_names in (("enc", ["self"]), ("dec", ["self", "cross"])):
        for i in range(config.n_layer):
            pfx = f"{kind}{i}"
            tensors[f"{pfx}.ln1.g"] = ones(d)
            tensors[f"{pfx}.ln1.b"] = zeros(d)
            for j, a in enumerate(attn_names):
                for w in ("wq", "wk", "wv", "wo"):
                    tensors[f"{pfx}.{a}.{w}"] = xavier(d, d)
                for b in ("bq", "bk", "bv", "bo"):
                    tensors[f"{pfx}.{a}.{b}"] = zeros(d)
                tensors[f"{pfx}.ln{j + 2}.g"] = ones(d)
                tensors[f"{pfx}.ln{j + 2}.b"] = zeros(d)
            tensors[f"{pfx}.ff.w1"] = xavier(d, dh)
            tensors[f"{pfx}.ff.b1"] = zeros(dh)
            tensors[f"{pfx}.ff.w2"] = xavier(dh, d)
            tensors[f"{pfx}.ff.b2"] = zeros(d)
        tensors[f"{kind}.ln.g"] = ones(d)
        tensors[f"{kind}.ln.b"] = zeros(d)
    tensors["out.w"] = xavier(d, v)
    tensors["out.b"] = zeros(v)
    return ModelParams(config, tensors)


# ---------------------------------------------------------------------------
# masks and decoder input
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CausalKMask:
    n: int
    k: int
    bits: np.ndarray  # (n, n) bool; bits[p, q] == position p may attend to q

    def additive(self) -> np.ndarray:
        return np.where(self.bits, 0.0, MASK_NEG)


def build_causal_k_mask(n: int, k) -> CausalKMask:
    """bits[p][q] = (q <= ceil(p/k) * k), 1-indexed: full attention inside a
    k-sized group plus everything in earlier groups."""
    if n < 1:
        raise ValueError("build_causal_k_mask: n must be >= 1")
    kk = n if k is K_N else int(k)
    if kk < 1:
        raise ValueError("build_causal_k_mask: k must be >= 1")
    p = np.arange(1, n + 1)[:, None]
    q = np.arange(1, n + 1)[None, :]
    group_end = np.ceil(p / kk).astype(np.int64) * kk
    bits = q <= group_end
    return CausalKMask(n=n, k=kk, bits=bits)


def build_decoder_input(x: Sequence[int], k, n: int, y: Optional[Sequence[int]] = None) -> np.ndarray:
    """Decoder input of length n: the first min(k, n) slots copy source tokens
    (slot p takes x[min(p, M)]), the rest carry y_1 .. y_{n-k}."""
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("build_decoder_input: source must be a non-empty token sequence")
    if n < 1:
        raise ValueError("build_decoder_input: target length must be >= 1")
    kk = effective_k(k, n)
    m = x.size
    out = np.empty(n, dtype=np.int64)
    head = np.minimum(np.arange(1, kk + 1), m) - 1
    out[:kk] = x[head]
    if kk < n:
        if y is None:
            raise ValueError("build_decoder_input: target prefix required when k < n")
        y = np.asarray(y, dtype=np.int64)
        if y.size < n - kk:
            raise ValueError(
                f"build_decoder_input: need {n - kk} target tokens, got {y.size}"
            )
        out[kk:] = y[: n - kk]
    return out


def pad_key_mask(lengths: Sequence[int], width: int) -> np.ndarray:
    """Additive mask (B, 1, 1, width) blocking attention to padded key slots."""
    lengths = np.asarray(lengths, dtype=np.int64)
    cols = np.arange(width)[None, :]
    blocked = cols >= lengths[:, None]
    return np.where(blocked, MASK_NEG, 0.0)[:, None, None, :]


def decoder_self_mask(k, tgt_lens: Sequence[int], width: int) -> np.ndarray:
    """Per-sentence additive self-attention mask (B, 1, width, width) combining
    the causal-k pattern at each sentence's effective k with key padding."""
    tgt_lens = np.asarray(tgt_lens, dtype=np.int64)
    out = np.empty((len(tgt_lens), 1, width, width))
    for b, n_b in enumerate(tgt_lens):
        kk = effective_k(k, int(n_b))
        base = build_causal_k_mask(width, kk).additive()
        base = base.copy()
        base[:, n_b:] = MASK_NEG
        out[b, 0] = base
    return out


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _positional_table(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    half = (d_model + 1) // 2
    freq = np.exp(-math.log(10000.0) * (2 * np.arange(half)) / d_model)
    angles = pos * freq[None, :]
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d_model // 2])
    table.setflags(write=False)
    return table


def _dropout(t: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or rate <= 0.0:
        return t
    keep = 1.0 - rate
    mask = (rng.random(t.shape) < keep).astype(np.float64) / keep
    return mul(t, mask)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _ln_affine(params: ModelParams, pfx: str, x: Tensor) -> Tensor:
    return add(mul(layer_norm(x), params[f"{pfx}.g"]), params[f"{pfx}.b"])


def _mha(
    params: ModelParams,
    pfx: str,
    x_q: Tensor,
    x_kv: Tensor,
    add_mask: Optional[np.ndarray],
) -> Tensor:
    cfg = params.config
    bsz, t_q, d = x_q.shape
    t_k = x_kv.shape[1]
    h, dh = cfg.n_head, d // cfg.n_head
    q = _linear(x_q, params[f"{pfx}.wq"], params[f"{pfx}.bq"])
    k = _linear(x_kv, params[f"{pfx}.wk"], params[f"{pfx}.bk"])
    v = _linear(x_kv, params[f"{pfx}.wv"], params[f"{pfx}.bv"])
    q = transpose(reshape(q, (bsz, t_q, h, dh)), (0, 2, 1, 3))
    k_t = transpose(reshape(k, (bsz, t_k, h, dh)), (0, 2, 3, 1))
    v = transpose(reshape(v, (bsz, t_k, h, dh)), (0, 2, 1, 3))
    scores = scale(matmul(q, k_t), dh ** -0.5)
    attn = softmax(scores, mask=add_mask)
    ctx = matmul(attn, v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (bsz, t_q, d))
    return _linear(ctx, params[f"{pfx}.wo"], params[f"{pfx}.bo"])


def _ff(params: ModelParams, pfx: str, x: Tensor) -> Tensor:
    hidden = relu(_linear(x, params[f"{pfx}.w1"], params[f"{pfx}.b1"]))
    return _linear(hidden, params[f"{pfx}.w2"], params[f"{pfx}.b2"])


def _embed_tokens(params: ModelParams, ids: np.ndarray) -> Tensor:
    cfg = params.config
    t = ids.shape[-1]
    if t > cfg.max_len:
        raise ValueError(f"sequence length {t} exceeds max_len {cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError(
            f"token id out of vocabulary: ids must be in [0, {cfg.vocab_size})"
        )
    emb = scale(embedding(params["embed"], ids), math.sqrt(cfg.d_model))
    pe = _positional_table(cfg.max_len, cfg.d_model)[:t]
    return add(emb, pe)


def encode_batch(
    params: ModelParams,
    src_ids: np.ndarray,
    src_lens: Sequence[int],
    drop_rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Encoder stack over a padded batch (B, M) -> states (B, M, d_model)."""
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if src_ids.ndim != 2:
        raise ValueError("encode_batch: src_ids must be (batch, length)")
    cfg = params.config
    rate = cfg.dropout
    mask = pad_key_mask(src_lens, src_ids.shape[1])
    x = _dropout(_embed_tokens(params, src_ids), rate, drop_rng)
    for i in range(cfg.n_layer):
        pfx = f"enc{i}"
        normed = _ln_affine(params, f"{pfx}.ln1", x)
        a = _mha(params, f"{pfx}.self", normed, normed, mask)
        x = add(x, _dropout(a, rate, drop_rng))
        f = _ff(params, f"{pfx}.ff", _ln_affine(params, f"{pfx}.ln2", x))
        x = add(x, _dropout(f, rate, drop_rng))
    return _ln_affine(params, "enc.ln", x)


def encode(params: ModelParams, x: Sequence[int]) -> Tensor:
    """Encode one sentence -> (M, d_model) states. Pure given frozen params."""
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("encode: source must be a non-empty token sequence")
    states = encode_batch(params, x[None, :], [x.size])
    return reshape(states, (x.size, params.config.d_model))


def decoder_forward_batch(
    params: ModelParams,
    dec_ids: np.ndarray,
    enc_states: Tensor,
    self_mask: np.ndarray,
    cross_mask: Optional[np.ndarray] = None,
    drop_rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Decoder stack over a padded batch -> logits (B, N, vocab)."""
    dec_ids = np.asarray(dec_ids, dtype=np.int64)
    if dec_ids.ndim != 2:
        raise ValueError("decoder_forward_batch: dec_ids must be (batch, length)")
    cfg = params.config
    rate = cfg.dropout
    y = _dropout(_embed_tokens(params, dec_ids), rate, drop_rng)
    for i in range(cfg.n_layer):
        pfx = f"dec{i}"
        normed = _ln_affine(params, f"{pfx}.ln1", y)
        a = _mha(params, f"{pfx}.self", normed, normed, self_mask)
        y = add(y, _dropout(a, rate, drop_rng))
        c = _mha(params, f"{pfx}.cross", _ln_affine(params, f"{pfx}.ln2", y), enc_states, cross_mask)
        y = add(y, _dropout(c, rate, drop_rng))
        f = _ff(params, f"{pfx}.ff", _ln_affine(params, f"{pfx}.ln3", y))
        y = add(y, _dropout(f, rate, drop_rng))
    y = _ln_affine(params, "dec.ln", y)
    return _linear(y, params["out.w"], params["out.b"])


def decoder_forward(
    params: ModelParams,
    dec_input: Sequence[int],
    enc_states: Tensor,
    mask: CausalKMask,
) -> Tensor:
    """Single-sentence decoder -> logits (N, vocab). Row t only sees decoder
    positions the mask admits, plus the encoder states."""
    dec_input = np.asarray(dec_input, dtype=np.int64)
    if dec_input.ndim != 1:
        raise ValueError("decoder_forward: dec_input must be a token sequence")
    if dec_input.size != mask.n:
        raise ValueError(
            f"decoder_forward: input length {dec_input.size} != mask size {mask.n}"
        )
    m, d = enc_states.shape[-2], enc_states.shape[-1]
    enc3 = reshape(enc_states, (1, m, d))
    self_mask = mask.additive()[None, None, :, :]
    logits = decoder_forward_batch(params, dec_input[None, :], enc3, self_mask)
    return reshape(logits, (mask.n, params.config.vocab_size))


def teacher_forced_nll(
    params: ModelParams,
    x: Sequence[int],
    y: Sequence[int],
    k,
    label_smoothing: float = 0.0,
) -> Tensor:
    """Mean per-token negative log-likelihood of y given x at parallelism k,
    computed in one masked forward pass."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("teacher_forced_nll: target must be non-empty")
    n = y.size
    kk = effective_k(k, n)
    dec_in = build_decoder_input(x, kk, n, y)
    enc_states = encode(params, x)
    logits = decoder_forward(params, dec_in, enc_states, build_causal_k_mask(n, kk))
    return cross_entropy(logits, y, label_smoothing=label_smoothing)


def batch_nll(
    params: ModelParams,
    src: np.ndarray,
    src_lens: Sequence[int],
    tgt: np.ndarray,
    tgt_lens: Sequence[int],
    k,
    pad_id: int,
    label_smoothing: float = 0.0,
    drop_rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Padded-batch training loss: mean NLL over non-pad target positions.

    Each sentence uses its own effective k = min(k, target length); decoder
    inputs and causal-k masks are built per sentence.
    """
    src = np.asarray(src, dtype=np.int64)
    tgt = np.asarray(tgt, dtype=np.int64)
    bsz, width = tgt.shape
    dec_in = np.full((bsz, width), pad_id, dtype=np.int64)
    for b in range(bsz):
        n_b = int(tgt_lens[b])
        xs = src[b, : src_lens[b]]
        dec_in[b, :n_b] = build_decoder_input(xs, effective_k(k, n_b), n_b, tgt[b, :n_b])
    enc_states = encode_batch(params, src, src_lens, drop_rng)
    self_mask = decoder_self_mask(k, tgt_lens, width)
    cross_mask = pad_key_mask(src_lens, src.shape[1])
    logits = decoder_forward_batch(params, dec_in, enc_states, self_mask, cross_mask, drop_rng)
    weights = (np.arange(width)[None, :] < np.asarray(tgt_lens)[:, None]).astype(np.float64)
    return cross_entropy(logits, tgt, weights=weights, label_smoothing=label_smoothing)
