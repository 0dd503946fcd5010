"""Metrics, transfer procedures, similarity matrices, and the numeric checks."""

import math

import pytest

from mtprompt import tensor as T
from mtprompt.evals import (ScoreTable, TransferReport, accuracy,
                            evaluate_task, harmonic_mean,
                            one_step_update_check, pearson_upper, rsd,
                            rsd_from_stats, normalize_scores,
                            similarity_report, transfer_eval, transfer_matrix)
from mtprompt.model import ModelState
from mtprompt.optim import TrainConfig, train
from mtprompt.prompt import init_context
from mtprompt.tensor import Rng, Tensor2


class TestAccuracy:
    def test_all_correct_is_ceiling(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 100.0
        assert accuracy([0, 1, 2], [0, 1, 2], metric="per-class") == 100.0

    def test_imbalanced_hand_count(self):
        # class A: 10 samples all right; class B: 1 sample wrong
        preds = [0] * 10 + [0]
        labels = [0] * 10 + [1]
        assert accuracy(preds, labels) == pytest.approx(100 * 10 / 11)
        assert accuracy(preds, labels, metric="per-class") == pytest.approx(50.0)

    def test_order_invariant(self):
        preds = [0, 1, 1, 2, 0]
        labels = [0, 1, 2, 2, 1]
        perm = [3, 0, 4, 2, 1]
        p2 = [preds[i] for i in perm]
        l2 = [labels[i] for i in perm]
        for metric in ("top1", "per-class"):
            assert accuracy(preds, labels, metric) == accuracy(p2, l2, metric)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy([], [])


class TestRsd:
    def test_zero_stds(self):
        table = ScoreTable()
        for shot in (1, 2, 4, 8, 16):
            for seed in (1, 2, 3):
                table.add(0, shot, seed, 60.0)
        assert rsd(table) == 0.0

    def test_direct_formula(self):
        assert rsd_from_stats([1.0] * 5, [50.0] * 5) == pytest.approx(0.02)

    def test_scale_invariance(self):
        stds = [1.0, 2.0, 0.5, 1.5, 1.0]
        scores = [50.0, 40.0, 60.0, 55.0, 45.0]
        a = rsd_from_stats(stds, scores)
        b = rsd_from_stats([3 * s for s in stds], [3 * s for s in scores])
        assert a == pytest.approx(b, rel=1e-12)

    def test_missing_shot_level(self):
        table = ScoreTable()
        for shot in (1, 2, 4):
            table.add(0, shot, 1, 50.0)
        with pytest.raises(ValueError):
            rsd(table)

    def test_score_bounds_validated(self):
        with pytest.raises(ValueError):
            ScoreTable().add(0, 1, 1, 101.0)


class TestHarmonicMean:
    def test_published_row(self):
        assert harmonic_mean(71.40, 60.15) == pytest.approx(65.29, abs=0.01)

    def test_equal_inputs(self):
        assert harmonic_mean(42.0, 42.0) == pytest.approx(42.0)

    def test_zero_annihilates(self):
        assert harmonic_mean(88.0, 0.0) == 0.0

    def test_double_zero_rejected(self):
        with pytest.raises(ValueError):
            harmonic_mean(0.0, 0.0)


class TestPearson:
    def test_hand_value(self):
        a = Tensor2.from_rows([[0, 1, 2], [0, 0, 3], [0, 0, 0]])
        b = Tensor2.from_rows([[0, 2, 4], [0, 0, 6], [0, 0, 0]])
        assert pearson_upper(a, b) == pytest.approx(1.0)

    def test_degenerate_constant(self):
        a = Tensor2.from_rows([[1, 1, 1], [1, 1, 1], [1, 1, 1]])
        b = Tensor2.from_rows([[0, 1, 2], [0, 0, 3], [0, 0, 0]])
        assert pearson_upper(a, b) is None

    def test_normalize_scores_unit_diagonal(self):
        s = Tensor2.from_rows([[2.0, 1.0], [0.5, 4.0]])
        sn = normalize_scores(s)
        assert sn.at(0, 0) == 1.0 and sn.at(1, 1) == 1.0
        assert sn.at(1, 0) == 0.25  # column 0 scaled by 1/2
        with pytest.raises(ValueError):
            normalize_scores(Tensor2.from_rows([[0.0, 1.0], [1.0, 1.0]]))


@pytest.fixture(scope="module")
def trained_single_task(check_tokenized):
    config = TrainConfig(method="coop-ca", epochs=6, batch_size=8, seed=1,
                         L=4)
    result = train(config, check_tokenized)
    return [result.state.ctxs[t] for t in range(check_tokenized.suite.n_tasks)]


class TestTransfer:
    def test_oracle_dominates_self_scores(self, check_tokenized, trained_single_task):
        rep = transfer_eval(trained_single_task, check_tokenized, "oracle")
        assert rep.matrix is not None
        for j in range(len(rep.per_task)):
            assert rep.per_task[j] >= rep.matrix.at(j, j)

    def test_matrix_diagonal_is_self_evaluation(self, check_tokenized,
                                                trained_single_task):
        s = transfer_matrix(trained_single_task, check_tokenized)
        suite = check_tokenized.suite
        state = ModelState("coop-ca", suite.n_tasks,
                           [b.n_classes for b in suite.bundles],
                           check_tokenized.enc.d_embed, suite.d_txt,
                           suite.temperature, L=4, seed=1)
        for t, ctx in enumerate(trained_single_task):
            state.set_parameter(f"ctx.task{t}", ctx)
        for t in range(suite.n_tasks):
            assert s.at(t, t) == pytest.approx(
                evaluate_task(state, check_tokenized, t), abs=1e-9)

    def test_singleton_collapses_all_modes(self, check_tokenized,
                                           trained_single_task):
        one = trained_single_task[:1]
        oracle = transfer_eval(one, check_tokenized, "oracle")
        ensf = transfer_eval(one, check_tokenized, "ensfeat")
        ensp = transfer_eval(one, check_tokenized, "enspred")
        plain = [oracle.matrix.at(0, j) for j in range(check_tokenized.suite.n_tasks)]
        assert oracle.per_task == plain
        assert ensf.per_task == pytest.approx(plain)
        assert ensp.per_task == pytest.approx(plain)

    def test_enspred_averages_are_distributions(self, check_tokenized,
                                                trained_single_task):
        from mtprompt.model import class_weights, predict_batch
        from mtprompt.prompt import PromptContext
        ts = check_tokenized
        feats = ts.suite.bundles[0].features
        acc_probs = Tensor2.zeros(feats.rows, ts.suite.bundles[0].n_classes)
        from mtprompt import _kernels as K
        for ctx in trained_single_task:
            w = class_weights(PromptContext(ctx), ts.class_tokens[0], ts.enc,
                              ts.suite.temperature)
            p = predict_batch(feats, w)
            K.axpy(1.0 / len(trained_single_task), p.data, acc_probs.data,
                   acc_probs.size)
        for i in range(acc_probs.rows):
            row = acc_probs.row(i)
            assert sum(row) == pytest.approx(1.0, abs=1e-9)
            assert all(v >= 0 for v in row)

    def test_unknown_mode(self, check_tokenized, trained_single_task):
        with pytest.raises(ValueError):
            transfer_eval(trained_single_task, check_tokenized, "blend")


class TestSimilarityReport:
    def test_structure(self, check_tokenized, trained_single_task):
        suite = check_tokenized.suite
        mt = train(TrainConfig(method="softcpt-nata", epochs=4, batch_size=8,
                               seed=1, L=4, M=2), check_tokenized).state
        s = transfer_matrix(trained_single_task, check_tokenized)
        rep = similarity_report(trained_single_task, mt, s, check_tokenized)
        n = suite.n_tasks
        for i in range(n):
            assert rep.s_norm.at(i, i) == 1.0
            assert rep.s_st.at(i, i) == pytest.approx(1.0, abs=1e-12)
            assert rep.s_mt.at(i, i) == pytest.approx(1.0, abs=1e-12)
            for j in range(n):
                assert rep.s_oracle.at(i, j) == pytest.approx(
                    rep.s_oracle.at(j, i), abs=1e-12)
                assert rep.s_st.at(i, j) == pytest.approx(
                    rep.s_st.at(j, i), abs=1e-12)
                assert -1.0 - 1e-9 <= rep.s_st.at(i, j) <= 1.0 + 1e-9

    def test_identical_contexts_degenerate(self, check_tokenized,
                                           trained_single_task):
        ctx = trained_single_task[0]
        same = [ctx] * len(trained_single_task)
        mt = train(TrainConfig(method="softcpt-nata", epochs=1, batch_size=8,
                               seed=1, L=4, M=2), check_tokenized).state
        s = transfer_matrix(trained_single_task, check_tokenized)
        rep = similarity_report(same, mt, s, check_tokenized)
        assert rep.corr_st is None  # constant matrix, flagged degenerate


class TestOneStepCheck:
    def test_zero_learning_rate_zero_residual(self, check_tokenized):
        suite = check_tokenized.suite
        st = ModelState("softcpt-nata", suite.n_tasks,
                        [b.n_classes for b in suite.bundles],
                        check_tokenized.enc.d_embed, suite.d_txt,
                        suite.temperature, seed=3)
        rep = one_step_update_check(st, check_tokenized, 0.0, mode="exact")
        assert rep.max_residual == 0.0

    @pytest.mark.parametrize("eta", [1e-1, 1e-2, 1e-3])
    def test_exact_mode_float_noise_only(self, check_tokenized, eta):
        suite = check_tokenized.suite
        st = ModelState("softcpt-nata", suite.n_tasks,
                        [b.n_classes for b in suite.bundles],
                        check_tokenized.enc.d_embed, suite.d_txt,
                        suite.temperature, seed=3)
        rep = one_step_update_check(st, check_tokenized, eta, mode="exact")
        assert rep.max_residual <= 1e-10
        assert len(rep.per_task) == suite.n_tasks
        assert rep.gram.shape == (suite.n_tasks, suite.n_tasks)

    def test_general_mode_second_order(self, check_tokenized):
        suite = check_tokenized.suite
        st = ModelState("softcpt-nats", suite.n_tasks,
                        [b.n_classes for b in suite.bundles],
                        check_tokenized.enc.d_embed, suite.d_txt,
                        suite.temperature, seed=3)
        for eta in (1e-2, 1e-3, 1e-4, 1e-5):
            r1 = one_step_update_check(st, check_tokenized, eta,
                                       mode="general").max_residual
            r2 = one_step_update_check(st, check_tokenized, eta / 2,
                                       mode="general").max_residual
            assert r1 / r2 >= 3.0, eta

    def test_contract_violations(self, check_tokenized):
        suite = check_tokenized.suite
        shape = (suite.n_tasks, [b.n_classes for b in suite.bundles],
                 check_tokenized.enc.d_embed, suite.d_txt, suite.temperature)
        mlp = ModelState("softcpt-nata", *shape, M=2, body="mlp", seed=1)
        with pytest.raises(ValueError):
            one_step_update_check(mlp, check_tokenized, 1e-3)
        cfeat = ModelState("softcpt-cata", *shape, M=2, K=2, seed=1)
        with pytest.raises(ValueError):
            one_step_update_check(cfeat, check_tokenized, 1e-3)
        nata = ModelState("softcpt-nata", *shape, M=2, seed=1)
        with pytest.raises(ValueError):
            one_step_update_check(nata, check_tokenized, 1e-3, mode="general")
        coop = ModelState("coop-mt", *shape, seed=1)
        with pytest.raises(ValueError):
            one_step_update_check(coop, check_tokenized, 1e-3)

    def test_diagnostics_are_populated(self, check_tokenized):
        suite = check_tokenized.suite
        st = ModelState("softcpt-nats", suite.n_tasks,
                        [b.n_classes for b in suite.bundles],
                        check_tokenized.enc.d_embed, suite.d_txt,
                        suite.temperature, M=2, seed=3)
        rep = one_step_update_check(st, check_tokenized, 1e-3, mode="general")
        flat = st.L * st.d_embed
        for diag in rep.per_task:
            assert diag.s_before.shape == (1, flat)
            assert diag.s_after_true.shape == (1, flat)
            assert diag.d.shape == (1, flat)
            assert diag.m is not None and diag.m.shape == (2, st.d_embed)
            assert abs(T.norm(diag.g) - 1.0) < 1e-12
