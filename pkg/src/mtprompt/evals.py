"""Metrics, transfer procedures, similarity analysis, and numeric checks.

Includes the one-step SGD decomposition check: for the soft-shared methods
with a linear generator, the post-step context of a task decomposes into
its old context, a task-local term, and a cross-task term weighted by task
feature similarities. With the task context frozen (or absent) the
decomposition is an algebraic identity; with learnable per-task contexts it
holds to second order in the learning rate. ``one_step_update_check``
measures both forms against the literally updated model.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field

from . import _kernels as K
from . import tensor as T
from .data import TokenizedSuite
from .encoder import TokenSequence, encode
from .errors import ShapeError
from .metanet import prefixed_feature_fwd
from .model import (ClassifierWeights, ModelState, class_weights,
                    multitask_loss, predict_batch)
from .prompt import PromptContext
from .tensor import Rng, Tensor2

SHOT_LEVELS = (1, 2, 4, 8, 16)


# ---------------------------------------------------------------------------
# accuracy metrics


def accuracy(predictions, labels, metric: str = "top1") -> float:
    """Percentage score: fraction correct, or the unweighted mean of
    per-class recalls."""
    if len(predictions) != len(labels):
        raise ShapeError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise ValueError("empty input")
    if metric == "top1":
        hits = sum(1 for p, y in zip(predictions, labels) if p == y)
        return 100.0 * hits / len(labels)
    if metric == "per-class":
        totals: dict = {}
        hits: dict = {}
        for p, y in zip(predictions, labels):
            totals[y] = totals.get(y, 0) + 1
            hits[y] = hits.get(y, 0) + (1 if p == y else 0)
        recalls = [hits[y] / totals[y] for y in sorted(totals)]
        return 100.0 * sum(recalls) / len(recalls)
    raise ValueError(f"metric must be top1 or per-class, got {metric!r}")


def argmax_rows(probs: Tensor2):
    out = []
    for i in range(probs.rows):
        row = probs.row(i)
        out.append(max(range(probs.cols), key=row.__getitem__))
    return out


def evaluate_weights(w: ClassifierWeights, feats: Tensor2, labels,
                     metric: str = "top1") -> float:
    return accuracy(argmax_rows(predict_batch(feats, w)), labels, metric)


def evaluate_task(state: ModelState, ts: TokenizedSuite, t: int,
                  split: str = "test", metric: str = "top1") -> float:
    b = ts.suite.bundles[t]
    idxs = b.splits[split]
    feats = T.cat_rows([T.rows_slice(b.features, i, i + 1) for i in idxs])
    labels = [b.labels[i] for i in idxs]
    return evaluate_weights(state.eval_class_weights(ts, t), feats, labels, metric)


# ---------------------------------------------------------------------------
# score tables and the relative-standard-deviation summary


@dataclass
class ScoreTable:
    """Accuracy per (task, shot, seed) plus aggregation helpers."""

    entries: list = field(default_factory=list)  # (task, shot, seed, score)

    def add(self, task: int, shot: int, seed: int, score: float):
        if not (0.0 <= score <= 100.0):
            raise ValueError(f"score {score} outside [0, 100]")
        self.entries.append((task, shot, seed, score))

    def scores(self, task: int, shot: int):
        return [s for t, k, _, s in self.entries if t == task and k == shot]

    def shots(self):
        return sorted({k for _, k, _, _ in self.entries})

    def tasks(self):
        return sorted({t for t, _, _, _ in self.entries})

    def task_mean_std(self, task: int, shot: int):
        xs = self.scores(task, shot)
        if not xs:
            raise ValueError(f"no entries for task {task}, shot {shot}")
        mean = sum(xs) / len(xs)
        if len(xs) == 1:
            return mean, 0.0
        var = sum((x - mean) ** 2 for x in xs) / (len(xs) - 1)
        return mean, math.sqrt(var)

    def shot_stats(self, shot: int):
        """Mean over tasks of per-task (mean over seeds, std over seeds)."""
        means, stds = [], []
        for t in self.tasks():
            m, s = self.task_mean_std(t, shot)
            means.append(m)
            stds.append(s)
        return sum(means) / len(means), sum(stds) / len(stds)


def rsd_from_stats(stds, scores) -> float:
    if len(stds) != len(scores):
        raise ShapeError("stds and scores differ in length")
    for s in scores:
        if s <= 0:
            raise ValueError("scores must be positive")
    return sum(st / sc for st, sc in zip(stds, scores)) / len(stds)


def rsd(table: ScoreTable, shots=SHOT_LEVELS) -> float:
    """Mean over shot levels of (mean per-task std) / (mean per-task score)."""
    have = set(table.shots())
    missing = [k for k in shots if k not in have]
    if missing:
        raise ValueError(f"missing shot levels {missing}")
    stats = [table.shot_stats(k) for k in shots]
    return rsd_from_stats([s for _, s in stats], [m for m, _ in stats])


def harmonic_mean(base: float, new: float) -> float:
    if base < 0 or new < 0:
        raise ValueError("scores must be non-negative")
    if base == 0 and new == 0:
        raise ValueError("harmonic mean of (0, 0) is undefined")
    if base == 0 or new == 0:
        return 0.0
    return 2.0 * base * new / (base + new)


# ---------------------------------------------------------------------------
# prompt transferring


@dataclass
class TransferReport:
    mode: str
    per_task: list  # score per target task
    matrix: Tensor2 | None = None  # S[i, j]: context i evaluated on task j


def _task_eval_data(ts: TokenizedSuite, t: int, split: str):
    b = ts.suite.bundles[t]
    idxs = b.splits[split]
    feats = T.cat_rows([T.rows_slice(b.features, i, i + 1) for i in idxs])
    return feats, [b.labels[i] for i in idxs]


def transfer_matrix(contexts, ts: TokenizedSuite, split: str = "test",
                    metric: str = "top1") -> Tensor2:
    """S[i, j] = score on task j's split using the context trained on task i.

    Square in the usual one-context-per-task workflow, but any number of
    source contexts is accepted (rows = sources, columns = target tasks).
    """
    n_src, n_tgt = len(contexts), ts.suite.n_tasks
    buf = array("d", bytes(8 * n_src * n_tgt))
    tau = ts.suite.temperature
    for j in range(n_tgt):
        feats, labels = _task_eval_data(ts, j, split)
        for i, ctx in enumerate(contexts):
            w = class_weights(PromptContext(ctx), ts.class_tokens[j], ts.enc, tau)
            buf[i * n_tgt + j] = evaluate_weights(w, feats, labels, metric)
    return Tensor2(n_src, n_tgt, buf)


def transfer_eval(contexts, ts: TokenizedSuite, mode: str, split: str = "test",
                  metric: str = "top1", renormalize: bool = True) -> TransferReport:
    """Cross-task reuse of single-task contexts.

    ``oracle`` scores every source context on the target task and keeps the
    best (also reporting the full matrix); ``ensfeat`` averages the
    classifier weight matrices built from all contexts (row-renormalized by
    default) before predicting; ``enspred`` averages the per-context
    prediction probabilities.
    """
    n = len(contexts)
    if n == 0:
        raise ValueError("no contexts")
    tau = ts.suite.temperature
    if mode == "oracle":
        s = transfer_matrix(contexts, ts, split, metric)
        per_task = [max(s.at(i, j) for i in range(n))
                    for j in range(ts.suite.n_tasks)]
        return TransferReport(mode=mode, per_task=per_task, matrix=s)
    if mode not in ("ensfeat", "enspred"):
        raise ValueError(f"mode must be oracle, ensfeat or enspred, got {mode!r}")
    per_task = []
    for j in range(ts.suite.n_tasks):
        feats, labels = _task_eval_data(ts, j, split)
        weight_mats = [
            class_weights(PromptContext(ctx), ts.class_tokens[j], ts.enc, tau)
            for ctx in contexts
        ]
        if mode == "ensfeat":
            acc_rows = Tensor2.zeros(weight_mats[0].rows.rows, ts.suite.d_txt)
            for w in weight_mats:
                K.axpy(1.0 / n, w.rows.data, acc_rows.data, acc_rows.size)
            if renormalize:
                acc_rows = T.cat_rows([
                    T.l2_normalize(T.rows_slice(acc_rows, r, r + 1))
                    for r in range(acc_rows.rows)
                ])
            w = ClassifierWeights(rows=acc_rows, temperature=tau)
            per_task.append(evaluate_weights(w, feats, labels, metric))
        else:
            probs_acc = Tensor2.zeros(feats.rows, weight_mats[0].n_classes)
            for w in weight_mats:
                p = predict_batch(feats, w)
                K.axpy(1.0 / n, p.data, probs_acc.data, probs_acc.size)
            per_task.append(accuracy(argmax_rows(probs_acc), labels, metric))
    return TransferReport(mode=mode, per_task=per_task)


# ---------------------------------------------------------------------------
# task-similarity matrices


@dataclass
class SimilarityReport:
    s: Tensor2
    s_norm: Tensor2
    s_oracle: Tensor2
    s_st: Tensor2
    s_mt: Tensor2
    corr_st: float | None
    corr_mt: float | None


def _cosine_matrix(feats) -> Tensor2:
    n = len(feats)
    buf = array("d", bytes(8 * n * n))
    for i in range(n):
        for j in range(n):
            denom = T.norm(feats[i]) * T.norm(feats[j])
            buf[i * n + j] = T.dot(feats[i], feats[j]) / denom
    return Tensor2(n, n, buf)


def pearson_upper(a: Tensor2, b: Tensor2) -> float | None:
    """Pearson correlation over the strict upper triangles; None when either
    side has zero variance (the degenerate constant-matrix case)."""
    if a.shape != b.shape or a.rows != a.cols:
        raise ShapeError("need two square matrices of equal size")
    xs, ys = [], []
    for i in range(a.rows):
        for j in range(i + 1, a.cols):
            xs.append(a.at(i, j))
            ys.append(b.at(i, j))
    if len(xs) < 2:
        return None
    mx = sum(xs) / len(xs)
    my = sum(ys) / len(ys)
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    if vx == 0.0 or vy == 0.0:
        return None
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    return cov / math.sqrt(vx * vy)


def normalize_scores(s: Tensor2) -> Tensor2:
    """Column j divided by the self-transfer score S[j, j]."""
    if s.rows != s.cols:
        raise ShapeError("score matrix must be square")
    out = array("d", s.data)
    n = s.rows
    for j in range(n):
        d = s.at(j, j)
        if d == 0.0:
            raise ValueError(f"zero diagonal entry at {j}")
        for i in range(n):
            out[i * n + j] = out[i * n + j] / d
    return Tensor2(n, n, out)


def _context_feature(ctx_matrix: Tensor2, ts: TokenizedSuite) -> Tensor2:
    # the context block is encoded alone, with no class tokens appended
    return encode(TokenSequence(ctx_matrix), ts.enc)


def similarity_report(st_contexts, mt_state: ModelState, s: Tensor2,
                      ts: TokenizedSuite) -> SimilarityReport:
    s_norm = normalize_scores(s)
    half = T.scale(T.add(s_norm, T.transpose(s_norm)), 0.5)
    st_feats = [_context_feature(ctx, ts) for ctx in st_contexts]
    mt_ctxs, _ = mt_state.generated_contexts(ts)
    mt_feats = [_context_feature(c.vectors, ts) for c in mt_ctxs]
    s_st = _cosine_matrix(st_feats)
    s_mt = _cosine_matrix(mt_feats)
    return SimilarityReport(
        s=s, s_norm=s_norm, s_oracle=half, s_st=s_st, s_mt=s_mt,
        corr_st=pearson_upper(half, s_st),
        corr_mt=pearson_upper(half, s_mt),
    )


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def finite_diff_check(state: ModelState, ts: TokenizedSuite, batch,
                      n_directions: int = 4, h: float = 1e-5, seed: int = 0):
    """Finite-difference check of the loss gradient, per learnable tensor.

    Each tensor is probed along its own gradient direction plus seeded
    random unit directions; the inner product with the analytic gradient is
    compared against a fourth-order central difference of the loss along
    the probe. Directional probes keep the quotient away from float
    cancellation (unlike per-coordinate steps on near-zero entries) and the
    five-point stencil suppresses truncation from sharp curvature. Probes
    whose true directional derivative sits below the absolute floor count
    as agreeing zeros.
    """
    loss0, _, grads = multitask_loss(state, ts, batch, train_mode=True)

    def loss_at() -> float:
        total, _, _ = multitask_loss(state, ts, batch, train_mode=True,
                                     want_grads=False)
        return total

    def loss_shifted(p, name, direction, step) -> float:
        moved = array("d", p.data)
        K.axpy(step, direction.data, moved, p.size)
        state.set_parameter(name, Tensor2(p.rows, p.cols, moved, check=False))
        value = loss_at()
        state.set_parameter(name, p)
        return value

    atol = 1e-6 * (1.0 + abs(loss0))
    report = {}
    rng = Rng(seed).spawn("fdcheck")
    for name, p in state.named_parameters().items():
        g = grads.get(name)
        if g is None:
            g = Tensor2.zeros(p.rows, p.cols)
        dirs = []
        if T.norm(g) > 0.0:
            dirs.append(T.l2_normalize(g))
        drng = rng.spawn(name)
        while len(dirs) < n_directions + 1:
            dirs.append(T.l2_normalize(drng.normal_tensor(p.rows, p.cols)))
        worst = 0.0
        for direction in dirs:
            f1 = loss_shifted(p, name, direction, h)
            f_1 = loss_shifted(p, name, direction, -h)
            f2 = loss_shifted(p, name, direction, 2 * h)
            f_2 = loss_shifted(p, name, direction, -2 * h)
            num = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h)
            ana = T.dot(g, direction)
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), atol))
        report[name] = (worst, len(dirs))
    return report


# ---------------------------------------------------------------------------
# one-step SGD decomposition check


@dataclass
class TaskUpdateDiag:
    task: int
    s_before: Tensor2  # 1 x (L*d_embed)
    s_after_true: Tensor2
    s_after_predicted: Tensor2
    d: Tensor2  # d(loss)/d(flat context), summed over the task's samples
    m: Tensor2 | None  # d(loss)/d(task context block); None when frozen
    g: Tensor2  # unit task feature
    residual: float


@dataclass
class OneStepReport:
    mode: str
    eta: float
    per_task: list
    gram: Tensor2  # pairwise task-feature inner products

    @property
    def max_residual(self) -> float:
        return max(d.residual for d in self.per_task)


def one_step_update_check(state: ModelState, ts: TokenizedSuite, eta: float,
                          mode: str = "exact",
                          train_indices: dict | None = None) -> OneStepReport:
    """Compare a literal full-batch SGD step against its predicted
    decomposition.

    ``exact`` freezes the task context during the step; the decomposition
    is then an identity up to float roundoff for any learning rate.
    ``general`` also updates the (task-specified) task contexts; the
    task-local term uses the literally recomputed post-step feature, and
    the residual shrinks as the square of the learning rate.
    """
    if mode not in ("exact", "general"):
        raise ValueError(f"mode must be exact or general, got {mode!r}")
    if state.cfg is None or state.cfg.uses_class_features:
        raise ValueError("the decomposition needs a softcpt method without "
                         "class features (nata or nats)")
    if state.body != "linear":
        raise ValueError("the decomposition holds for the linear body only")
    if mode == "general" and not state.cfg.task_specific:
        raise ValueError("general mode needs task-specified contexts "
                         "(softcpt-nats)")
    suite = ts.suite
    n_tasks = suite.n_tasks
    flatlen = state.L * state.d_embed
    w = state.net.w

    # forward: task features, contexts, and per-task loss gradients d_t
    tfeat, tf_bwd = [], []
    for t in range(n_tasks):
        g, bwd = prefixed_feature_fwd(
            state.task_ctx.block_for(t), ts.task_tokens[t], ts.enc)
        tfeat.append(g)
        tf_bwd.append(bwd)
    gmat = T.cat_rows(tfeat)  # T x d_txt
    flat = T.matmul(gmat, w)  # T x flatlen; row t is task t's flat context

    from .model import class_weights_fwd, _xent_fwd_bwd, _normalize_rows

    d_rows = []
    for t in range(n_tasks):
        b = suite.bundles[t]
        idxs = (train_indices or {}).get(t, b.splits["train"])
        ctx = PromptContext(T.reshape(T.rows_slice(flat, t, t + 1),
                                      state.L, state.d_embed), learnable=False)
        cw, cw_bwd = class_weights_fwd(ctx, ts.class_tokens[t], ts.enc,
                                       state.temperature)
        xn = _normalize_rows(T.cat_rows(
            [T.rows_slice(b.features, i, i + 1) for i in idxs]))
        _, drows = _xent_fwd_bwd(xn, [b.labels[i] for i in idxs], cw)
        d_t = Tensor2.zeros(state.L, state.d_embed)
        for ds in cw_bwd(drows):
            K.axpy(1.0, ds.data, d_t.data, d_t.size)
        d_rows.append(T.reshape(d_t, 1, flatlen))
    dmat = T.cat_rows(d_rows)  # T x flatlen

    # literal SGD step
    w_new = T.sub(w, T.scale(T.matmul_tn(gmat, dmat), eta))
    m_blocks = []
    if mode == "general":
        dgen_in = T.matmul_nt(dmat, w)  # row t: d_t W^T
        for t in range(n_tasks):
            m_blocks.append(tf_bwd[t](T.rows_slice(dgen_in, t, t + 1)))
        g_new = []
        for t in range(n_tasks):
            u_new = T.sub(state.task_ctx.block_for(t), T.scale(m_blocks[t], eta))
            tokens = ts.task_tokens[t]
            if u_new.rows:
                seq = TokenSequence(T.cat_rows([u_new, tokens.matrix]))
            else:
                seq = tokens
            g_new.append(T.l2_normalize(encode(seq, ts.enc)))
    else:
        m_blocks = [None] * n_tasks
        g_new = tfeat

    gram = T.matmul_nt(gmat, gmat)
    diags = []
    for t in range(n_tasks):
        s_before = T.rows_slice(flat, t, t + 1)
        s_true = T.matmul(g_new[t], w_new)
        # cross-task term: eta * sum_k <g_k, g_t> d_k
        coeffs = T.matmul_nt(tfeat[t], gmat)  # 1 x T
        cross = T.scale(T.matmul(coeffs, dmat), eta)
        if mode == "exact":
            s_pred = T.sub(s_before, cross)
        else:
            local = T.matmul(T.sub(g_new[t], tfeat[t]), w)
            s_pred = T.sub(T.add(s_before, local), cross)
        resid = T.norm(T.sub(s_true, s_pred))
        diags.append(TaskUpdateDiag(
            task=t, s_before=s_before, s_after_true=s_true,
            s_after_predicted=s_pred, d=d_rows[t], m=m_blocks[t],
            g=tfeat[t], residual=resid))
    return OneStepReport(mode=mode, eta=eta, per_task=diags, gram=gram)
