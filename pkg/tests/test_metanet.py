"""Generator bodies, task features, parameter census, soft-sharing bound."""

from array import array

import pytest

from mtprompt import tensor as T
from mtprompt.encoder import EncoderSpec, tokenize_and_embed
from mtprompt.errors import ShapeError
from mtprompt.metanet import (MetaNet, context_from_flat, generate_context,
                              lipschitz_bound, param_count, task_feature,
                              task_feature_fwd)
from mtprompt.prompt import TaskContext, init_context
from mtprompt.tensor import Rng, Tensor2


@pytest.fixture()
def task_setup(default_encoder):
    rng = Rng(40)
    tctx = TaskContext(owner="shared",
                       blocks=[init_context(4, default_encoder.d_embed, rng)])
    tokens = tokenize_and_embed("mineral classification", default_encoder)
    return tctx, tokens


class TestTaskFeature:
    def test_unit_norm(self, default_encoder, task_setup):
        tctx, tokens = task_setup
        feat = task_feature(tctx, tokens, 0, default_encoder)
        assert abs(T.norm(feat.g) - 1.0) < 1e-12

    def test_deterministic(self, default_encoder, task_setup):
        tctx, tokens = task_setup
        a = task_feature(tctx, tokens, 0, default_encoder)
        b = task_feature(tctx, tokens, 0, default_encoder)
        assert a.g == b.g

    def test_gradient_matches_finite_differences(self, default_encoder, task_setup):
        tctx, tokens = task_setup
        cot = Rng(41).normal_tensor(1, default_encoder.d_txt)
        feat, bwd = task_feature_fwd(tctx, tokens, 0, default_encoder)
        grad = bwd(cot)
        block = tctx.blocks[0]
        h = 1e-6
        worst = 0.0
        for idx in range(0, block.size, 7):
            up = array("d", block.data)
            up[idx] += h
            dn = array("d", block.data)
            dn[idx] -= h
            up_ctx = TaskContext(owner="shared",
                                 blocks=[Tensor2(block.rows, block.cols, up)])
            dn_ctx = TaskContext(owner="shared",
                                 blocks=[Tensor2(block.rows, block.cols, dn)])
            fu = task_feature(up_ctx, tokens, 0, default_encoder)
            fd = task_feature(dn_ctx, tokens, 0, default_encoder)
            num = (T.dot(fu.g, cot) - T.dot(fd.g, cot)) / (2 * h)
            worst = max(worst, abs(num - grad.data[idx])
                        / max(abs(num), abs(grad.data[idx]), 1e-12))
        assert worst < 1e-5


class TestGenerate:
    def test_zero_weight_gives_zero_context(self):
        net = MetaNet(6, L=3, d_embed=4, rng=Rng(1))
        net.set_parameter("metanet.w", Tensor2.zeros(6, 12))
        ctx = generate_context(Rng(2).normal_tensor(1, 6), net)
        assert all(v == 0.0 for v in ctx.vectors.data)
        assert not ctx.learnable

    def test_single_token_is_plain_linear_map(self):
        net = MetaNet(5, L=1, d_embed=7, rng=Rng(3))
        g = Rng(4).normal_tensor(1, 5)
        ctx = generate_context(g, net)
        assert ctx.vectors == T.matmul(g, net.w)

    def test_flat_layout_row_major_chunks(self):
        d_embed, L = 4, 3
        flat = Tensor2.vector(list(range(12)))
        ctx = context_from_flat(flat, L, d_embed)
        for l in range(L):
            chunk = T.rows_slice(ctx.vectors, l, l + 1)
            assert list(chunk.data) == list(range(l * d_embed, (l + 1) * d_embed))

    def test_identical_features_give_identical_contexts(self):
        net = MetaNet(6, L=2, d_embed=4, rng=Rng(5))
        g = Rng(6).normal_tensor(1, 6)
        a = generate_context(g, net)
        b = generate_context(g.copy(), net)
        assert a.vectors == b.vectors

    def test_input_width_checked(self):
        net = MetaNet(6, L=2, d_embed=4, rng=Rng(7))
        with pytest.raises(ShapeError):
            net.generate(Rng(8).normal_tensor(1, 5))


class TestMlpBody:
    def test_shapes_and_params(self):
        net = MetaNet(8, L=2, d_embed=4, body="mlp", reduction=2, rng=Rng(9))
        params = net.named_parameters()
        assert params["metanet.w1"].shape == (8, 4)
        assert params["metanet.gamma"].shape == (1, 4)
        assert params["metanet.beta"].shape == (1, 4)
        assert params["metanet.w2"].shape == (4, 8)

    def test_eval_mode_uses_frozen_statistics(self):
        net = MetaNet(6, L=2, d_embed=3, body="mlp", reduction=1, rng=Rng(10))
        feats = Rng(11).normal_tensor(4, 6)
        out_train, _ = net.generate(feats, train_mode=True)
        frozen_mean = net.bn_mean.copy()
        single = T.rows_slice(feats, 0, 1)
        out_eval, _ = net.generate(single, train_mode=False)
        assert net.bn_mean == frozen_mean  # eval did not touch the stats
        assert out_eval == T.rows_slice(
            net.generate(feats, train_mode=False)[0], 0, 1)
        assert out_train.shape == (4, 6)

    def test_eval_mode_backward_rejected(self):
        net = MetaNet(6, L=2, d_embed=3, body="mlp", rng=Rng(12))
        net.generate(Rng(13).normal_tensor(3, 6), train_mode=True)
        _, bwd = net.generate(Rng(13).normal_tensor(3, 6), train_mode=False)
        with pytest.raises(RuntimeError):
            bwd(Tensor2.zeros(3, 6))


class TestLipschitzBound:
    def test_holds_on_random_pairs(self):
        net = MetaNet(16, L=4, d_embed=8, rng=Rng(14))
        sigma = lipschitz_bound(net)
        rng = Rng(15)
        for _ in range(1000):
            a = rng.normal_tensor(1, 16)
            b = rng.normal_tensor(1, 16)
            lhs = T.norm(T.sub(T.matmul(a, net.w), T.matmul(b, net.w)))
            assert lhs <= sigma * T.norm(T.sub(a, b)) * (1 + 1e-9)

    def test_linear_body_only(self):
        net = MetaNet(8, L=2, d_embed=4, body="mlp", rng=Rng(16))
        with pytest.raises(ValueError):
            lipschitz_bound(net)


class TestParamCount:
    """Published parameter counts for the 512-wide embedding, 1024-wide
    text-feature configuration."""

    def test_single_task_class_agnostic(self):
        assert param_count("coop-ca", 10, 1191, 512, 1024) == 81_920

    def test_hard_shared(self):
        assert param_count("coop-mt", 10, 1191, 512, 1024) == 8_192

    def test_class_specific(self):
        assert param_count("coop-cs", 10, 1191, 512, 1024) == 9_756_672

    def test_soft_shared_task_agnostic(self):
        assert param_count("softcpt-nata", 10, 1191, 512, 1024,
                           L=16, M=8) == 8_392_704

    def test_soft_shared_task_specific_scales_with_tasks(self):
        # the true census grows with the task count: W plus T task contexts
        base = 1024 * 512 * 16
        for n_tasks in (6, 8, 10, 20):
            expected = base + n_tasks * 8 * 512
            assert param_count("softcpt-nats", n_tasks, 1191, 512, 1024,
                               L=16, M=8) == expected
        assert param_count("softcpt-nats", 8, 1191, 512, 1024,
                           L=16, M=8) == 8_421_376

    def test_class_feature_variants_double_input_width(self):
        got = param_count("softcpt-cata", 10, 100, 512, 1024, L=16, M=8, K=4)
        assert got == 2 * 1024 * 512 * 16 + 8 * 512 + 4 * 512
        got = param_count("softcpt-csts", 10, 100, 512, 1024, L=16, M=8, K=4)
        assert got == 2 * 1024 * 512 * 16 + 10 * 8 * 512 + 100 * 4 * 512

    def test_mlp_body_census(self):
        d_in, hidden, d_out = 64, 32, 16 * 32
        got = param_count("softcpt-nata", 3, 12, 32, 64, L=16, M=8,
                          body="mlp", reduction=2)
        assert got == d_in * hidden + 2 * hidden + hidden * d_out + 8 * 32

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            param_count("adapter", 1, 1, 8, 8)
