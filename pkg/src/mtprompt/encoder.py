"""Frozen text encoder: a small deterministic transformer.

The encoder maps a sequence of token embeddings to one pooled feature
vector and exposes the exact gradient of that feature with respect to the
*input* embeddings, which is how learnable context tokens are trained while
every encoder weight stays fixed. Weights are derived entirely from the
spec and its seed, built once and cached, and never mutated.

Architecture: additive sinusoidal positions (zero at position 0, so a
single token at depth 0 encodes to its bare linear projection), ``depth``
residual blocks of multi-head softmax attention and a tanh feed-forward,
then mean or last-token pooling followed by a bias-free projection to the
feature width. Layer normalization is deliberately omitted to keep the
input Jacobian simple; at this scale it is not needed for stability.

Sequences produced elsewhere (exported token-embedding blocks from a real
model) are accepted as-is: any matrix of width ``d_embed`` is a valid
input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from . import tensor as T
from .errors import DegenerateInputError, ShapeError
from .tensor import Rng, Tensor2, fnv1a64


@dataclass(frozen=True)
class EncoderSpec:
    d_embed: int = 32
    d_txt: int = 64
    depth: int = 2
    heads: int = 2
    pooling: str = "mean"  # or "last"
    weight_seed: int = 0
    vocab_size: int = 8192
    ffn_mult: int = 2

    def __post_init__(self):
        if self.d_embed <= 0 or self.d_txt <= 0:
            raise ShapeError("widths must be positive")
        if self.depth < 0 or self.heads < 1:
            raise ShapeError("bad depth/heads")
        if self.d_embed % self.heads:
            raise ShapeError(f"heads {self.heads} must divide d_embed {self.d_embed}")
        if self.pooling not in ("mean", "last"):
            raise ValueError(f"pooling must be mean or last, got {self.pooling!r}")

    def to_json_dict(self) -> dict:
        return {
            "d_embed": self.d_embed,
            "d_txt": self.d_txt,
            "depth": self.depth,
            "heads": self.heads,
            "pooling": self.pooling,
            "weight_seed": self.weight_seed,
            "vocab_size": self.vocab_size,
            "ffn_mult": self.ffn_mult,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "EncoderSpec":
        return EncoderSpec(**d)


class TokenSequence:
    """An ordered block of token embeddings: an n x d_embed matrix."""

    __slots__ = ("matrix",)

    def __init__(self, matrix: Tensor2):
        if matrix.rows < 1:
            raise ShapeError("token sequence must hold at least one token")
        self.matrix = matrix

    @property
    def length(self) -> int:
        return self.matrix.rows

    @property
    def width(self) -> int:
        return self.matrix.cols

    def __eq__(self, other):
        return isinstance(other, TokenSequence) and self.matrix == other.matrix


@dataclass(frozen=True)
class _Weights:
    layers: tuple
    proj: Tensor2


@lru_cache(maxsize=16)
def _weights(spec: EncoderSpec) -> _Weights:
    root = Rng(spec.weight_seed).spawn("encoder-weights")
    d = spec.d_embed
    h = spec.ffn_mult * d
    layers = []
    for i in range(spec.depth):
        lr = root.spawn(f"layer{i}")
        layers.append(
            {
                "wq": lr.spawn("wq").normal_tensor(d, d, 1.0 / math.sqrt(d)),
                "wk": lr.spawn("wk").normal_tensor(d, d, 1.0 / math.sqrt(d)),
                "wv": lr.spawn("wv").normal_tensor(d, d, 1.0 / math.sqrt(d)),
                "wo": lr.spawn("wo").normal_tensor(d, d, 1.0 / math.sqrt(d)),
                "w1": lr.spawn("w1").normal_tensor(d, h, 1.0 / math.sqrt(d)),
                "w2": lr.spawn("w2").normal_tensor(h, d, 1.0 / math.sqrt(h)),
            }
        )
    proj = root.spawn("proj").normal_tensor(d, spec.d_txt, 1.0 / math.sqrt(d))
    return _Weights(layers=tuple(layers), proj=proj)


@lru_cache(maxsize=64)
def _positions(n: int, d: int) -> Tensor2:
    # sin-only encoding; position 0 is exactly the zero vector
    rows = []
    for pos in range(n):
        rows.append([math.sin(pos / (10000.0 ** (i / d))) for i in range(d)])
    return Tensor2.from_rows(rows)


@lru_cache(maxsize=65536)
def _slot_embedding(embed_seed: int, slot: int, d_embed: int) -> Tensor2:
    return Rng(embed_seed).spawn(f"tok{slot}").normal_tensor(1, d_embed)


def hash_token(token: str, vocab_size: int) -> int:
    return fnv1a64(token) % vocab_size


def tokenize_and_embed(text: str, spec: EncoderSpec, embed_seed: int = 0) -> TokenSequence:
    """Lowercased whitespace tokens, each hashed to a frozen embedding slot.

    The same text always produces the same sequence; token order matters
    because positions are added inside :func:`encode`.
    """
    words = text.lower().split()
    if not words:
        raise DegenerateInputError(f"cannot tokenize empty text {text!r}")
    rows = [
        _slot_embedding(embed_seed, hash_token(w, spec.vocab_size), spec.d_embed)
        for w in words
    ]
    return TokenSequence(T.cat_rows(rows))


class _Tape:
    __slots__ = ("x_final", "per_layer", "n")

    def __init__(self, n):
        self.n = n
        self.per_layer = []
        self.x_final = None


def _check_input(seq: TokenSequence, spec: EncoderSpec):
    if seq.width != spec.d_embed:
        raise ShapeError(f"token width {seq.width} != d_embed {spec.d_embed}")


def encode_fwd(seq: TokenSequence, spec: EncoderSpec):
    """Forward pass returning (feature, tape) for a later backward call."""
    _check_input(seq, spec)
    w = _weights(spec)
    n, d = seq.length, spec.d_embed
    nh = spec.heads
    dh = d // nh
    att_scale = 1.0 / math.sqrt(dh)

    x = T.add(seq.matrix, _positions(n, d))
    tape = _Tape(n)
    for lw in w.layers:
        q = T.matmul(x, lw["wq"])
        k = T.matmul(x, lw["wk"])
        v = T.matmul(x, lw["wv"])
        heads = []
        outs = []
        for hi in range(nh):
            qh = T.cols_slice(q, hi * dh, (hi + 1) * dh)
            kh = T.cols_slice(k, hi * dh, (hi + 1) * dh)
            vh = T.cols_slice(v, hi * dh, (hi + 1) * dh)
            scores = T.scale(T.matmul_nt(qh, kh), att_scale)
            attn = T.softmax_rows(scores)
            outs.append(T.matmul(attn, vh))
            heads.append((qh, kh, vh, attn))
        x1 = T.add(x, T.matmul(T.cat_cols(outs), lw["wo"]))
        f2 = T.tanh(T.matmul(x1, lw["w1"]))
        x = T.add(x1, T.matmul(f2, lw["w2"]))
        tape.per_layer.append({"heads": heads, "x1": x1, "f2": f2})
    tape.x_final = x

    pooled = T.mean_rows(x) if spec.pooling == "mean" else T.rows_slice(x, n - 1, n)
    return T.matmul(pooled, w.proj), tape


def encode(seq: TokenSequence, spec: EncoderSpec) -> Tensor2:
    """Pooled feature of the sequence, width d_txt. Not normalized here."""
    feat, _ = encode_fwd(seq, spec)
    return feat


def encode_bwd(seq: TokenSequence, spec: EncoderSpec, tape: _Tape, cot: Tensor2) -> Tensor2:
    """Gradient of <encode(seq), cot> w.r.t. every input token embedding."""
    if cot.shape != (1, spec.d_txt):
        raise ShapeError(f"cotangent {cot.shape} != (1, {spec.d_txt})")
    w = _weights(spec)
    n, d = tape.n, spec.d_embed
    nh = spec.heads
    dh = d // nh
    att_scale = 1.0 / math.sqrt(dh)

    dpooled = T.matmul_nt(cot, w.proj)
    if spec.pooling == "mean":
        grad_row = T.scale(dpooled, 1.0 / n)
        dx = T.cat_rows([grad_row] * n)
    else:
        dx = T.cat_rows([T.Tensor2.zeros(n - 1, d), dpooled]) if n > 1 else dpooled

    for lw, rec in zip(reversed(w.layers), reversed(tape.per_layer)):
        # x_out = x1 + tanh(x1 w1) w2
        df2 = T.matmul_nt(dx, lw["w2"])
        df1 = T.tanh_vjp(rec["f2"], df2)
        dx1 = T.add(dx, T.matmul_nt(df1, lw["w1"]))
        # x1 = x + cat_cols(attn_h vh) wo
        do = T.matmul_nt(dx1, lw["wo"])
        dq_parts, dk_parts, dv_parts = [], [], []
        for hi, (qh, kh, vh, attn) in enumerate(rec["heads"]):
            doh = T.cols_slice(do, hi * dh, (hi + 1) * dh)
            dattn = T.matmul_nt(doh, vh)
            dv_parts.append(T.matmul_tn(attn, doh))
            dscores = T.scale(T.softmax_rows_vjp(attn, dattn), att_scale)
            dq_parts.append(T.matmul(dscores, kh))
            dk_parts.append(T.matmul_tn(dscores, qh))
        dx = dx1
        dx = T.add(dx, T.matmul_nt(T.cat_cols(dq_parts), lw["wq"]))
        dx = T.add(dx, T.matmul_nt(T.cat_cols(dk_parts), lw["wk"]))
        dx = T.add(dx, T.matmul_nt(T.cat_cols(dv_parts), lw["wv"]))
    return dx


def encode_vjp(seq: TokenSequence, spec: EncoderSpec, cot: Tensor2) -> Tensor2:
    """One-shot forward+backward; see :func:`encode_bwd`."""
    _, tape = encode_fwd(seq, spec)
    return encode_bwd(seq, spec, tape, cot)
