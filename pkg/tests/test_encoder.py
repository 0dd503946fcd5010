"""Frozen toy encoder: determinism, pooling behavior, and input gradients."""

from array import array

import pytest

from mtprompt import tensor as T
from mtprompt.encoder import (EncoderSpec, TokenSequence, _weights, encode,
                              encode_vjp, hash_token, tokenize_and_embed)
from mtprompt.errors import DegenerateInputError, ShapeError
from mtprompt.tensor import Rng, Tensor2

# 44 realistic task names from general, plant, remote-sensing, and fashion
# classification suites; used to measure hash-slot collisions.
TASK_NAMES = [
    "object classification",
    "texture classification",
    "land use and land cover classification",
    "aircraft classification",
    "food classification",
    "flower classification",
    "pets classification",
    "car classification",
    "scene classification",
    "action classification",
    "fruits and vegetables image classification",
    "flower classification",
    "mushroom classification",
    "vegetable classification",
    "plant seedling classification",
    "plant leaf disease classification",
    "aerial image scene classification",
    "remote sensing image scene classification",
    "Google Earth image scene classification",
    "global-scale remote sensing image scene classification",
    "Google Earth image scene classification",
    "satellite image scene classification",
    "remote sensing image scene classification with high resolution overhead image",
    "Google Earth image scene classification",
    "pants type",
    "pants length",
    "waist type",
    "collar type",
    "sleeve type",
    "sleeve length",
    "top pattern",
    "shoe material",
    "shoe style",
    "heel shape",
    "heel thickness",
    "heel height",
    "upper height",
    "toe cap style",
    "hat style",
    "socks length",
    "socks type",
    "skirt length",
    "number of button rows",
    "underwear style",
]


class TestTokenizer:
    def test_deterministic(self, default_encoder):
        a = tokenize_and_embed("flower classification", default_encoder)
        b = tokenize_and_embed("flower classification", default_encoder)
        assert a == b

    def test_order_sensitive(self, default_encoder):
        a = tokenize_and_embed("a b", default_encoder)
        b = tokenize_and_embed("b a", default_encoder)
        assert a != b

    def test_empty_text_rejected(self, default_encoder):
        with pytest.raises(DegenerateInputError):
            tokenize_and_embed("   ", default_encoder)

    def test_case_folding(self, default_encoder):
        assert tokenize_and_embed("Flower", default_encoder) == tokenize_and_embed(
            "flower", default_encoder)

    def test_collision_rate_on_task_vocabulary(self, default_encoder):
        words = sorted({w for name in TASK_NAMES for w in name.lower().split()})
        slots = {hash_token(w, default_encoder.vocab_size) for w in words}
        rate = (len(words) - len(slots)) / len(words)
        assert rate < 0.05, f"collision rate {rate:.3f} over {len(words)} words"


class TestEncode:
    def test_deterministic_and_frozen(self, default_encoder):
        seq = tokenize_and_embed("satellite image scene classification",
                                 default_encoder)
        f1 = encode(seq, default_encoder)
        f2 = encode(seq, default_encoder)
        assert f1 == f2
        assert f1.shape == (1, default_encoder.d_txt)

    def test_output_width_independent_of_length(self, default_encoder):
        for text in ("one", "one two three", "a b c d e f g h"):
            feat = encode(tokenize_and_embed(text, default_encoder), default_encoder)
            assert feat.shape == (1, default_encoder.d_txt)

    def test_permutation_sensitivity_with_positions(self, default_encoder):
        x = Rng(1).normal_tensor(2, default_encoder.d_embed)
        swapped = T.cat_rows([T.rows_slice(x, 1, 2), T.rows_slice(x, 0, 1)])
        a = encode(TokenSequence(x), default_encoder)
        b = encode(TokenSequence(swapped), default_encoder)
        assert a != b

    def test_depth_zero_single_token_is_projection(self):
        spec = EncoderSpec(depth=0)
        tok = Rng(3).normal_tensor(1, spec.d_embed)
        out = encode(TokenSequence(tok), spec)
        assert out == T.matmul(tok, _weights(spec).proj)

    def test_width_mismatch_rejected(self, default_encoder):
        bad = TokenSequence(Rng(4).normal_tensor(3, default_encoder.d_embed + 1))
        with pytest.raises(ShapeError):
            encode(bad, default_encoder)

    def test_weights_are_cached_and_stable(self, default_encoder):
        w1 = _weights(default_encoder)
        w2 = _weights(default_encoder)
        assert w1 is w2


class TestEncodeVjp:
    def test_zero_cotangent_gives_zero_gradient(self, default_encoder):
        seq = TokenSequence(Rng(5).normal_tensor(4, default_encoder.d_embed))
        g = encode_vjp(seq, default_encoder, Tensor2.zeros(1, default_encoder.d_txt))
        assert all(v == 0.0 for v in g.data)

    @pytest.mark.parametrize("depth", [0, 1, 2])
    @pytest.mark.parametrize("pooling", ["mean", "last"])
    def test_matches_finite_differences(self, depth, pooling):
        spec = EncoderSpec(depth=depth, pooling=pooling)
        rng = Rng(99)
        n, d = 3, spec.d_embed
        x = rng.normal_tensor(n, d)
        cot = rng.normal_tensor(1, spec.d_txt)
        grad = encode_vjp(TokenSequence(x), spec, cot)
        h = 1e-6
        worst = 0.0
        for idx in range(0, n * d, 5):
            up = array("d", x.data)
            up[idx] += h
            dn = array("d", x.data)
            dn[idx] -= h
            num = (T.dot(encode(TokenSequence(Tensor2(n, d, up)), spec), cot)
                   - T.dot(encode(TokenSequence(Tensor2(n, d, dn)), spec), cot)) / (2 * h)
            ana = grad.data[idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-12))
        assert worst < 1e-5

    def test_gradient_reaches_every_token_under_mean_pooling(self, default_encoder):
        rng = Rng(7)
        n = 4
        x = rng.normal_tensor(n, default_encoder.d_embed)
        cot = rng.normal_tensor(1, default_encoder.d_txt)
        g = encode_vjp(TokenSequence(x), default_encoder, cot)
        for i in range(n):
            assert T.norm(T.rows_slice(g, i, i + 1)) > 0.0

    def test_cotangent_shape_checked(self, default_encoder):
        seq = TokenSequence(Rng(8).normal_tensor(2, default_encoder.d_embed))
        with pytest.raises(ShapeError):
            encode_vjp(seq, default_encoder, Tensor2.zeros(1, 3))
