"""Classifier-weight generation, prediction, and the multi-task objective.

``ModelState`` owns every learnable tensor of one method:

* ``coop-ca``   one free context per task, trained per task;
* ``coop-cs``   one free context per class, trained per task;
* ``coop-mt``   a single context hard-shared by all tasks;
* ``softcpt-*`` a generator (see :mod:`mtprompt.metanet`) plus task
  contexts, and for the C* variants class contexts as well.

Class-name features become classifier weights: row c of a task's weight
matrix is the unit-normalized encoding of [context ++ class-name tokens].
Prediction is softmax over cosine similarity divided by the temperature.
The training loss is the plain sum of per-task cross-entropy sums, no
task weighting, and its backward walks the whole chain down to every
learnable tensor while the encoder and the image features stay frozen.
"""

from __future__ import annotations

import json
import math
import os
import shutil
from array import array
from dataclasses import dataclass

from . import _kernels as K
from . import tensor as T
from .data import TokenizedSuite, Suite, read_tensor_block, write_tensor_block
from .encoder import EncoderSpec
from .errors import DatasetError, DegenerateInputError, ShapeError
from .metanet import MetaNet, context_from_flat, prefixed_feature_fwd
from .prompt import (ClassContext, PromptContext, SoftCptConfig, TaskContext,
                     augment_task_feature, init_context)
from .tensor import Rng, Tensor2

METHODS = (
    "coop-ca", "coop-cs", "coop-mt",
    "softcpt-nata", "softcpt-nats", "softcpt-cata",
    "softcpt-csta", "softcpt-cats", "softcpt-csts",
)

AUGMENT_ORDER = "task-first"  # generator input is [task feature ++ class feature]


@dataclass
class ClassifierWeights:
    rows: Tensor2  # C x d_txt, unit rows
    temperature: float

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")

    @property
    def n_classes(self) -> int:
        return self.rows.rows


# ---------------------------------------------------------------------------
# forward pieces


def class_weights_fwd(contexts, token_seqs, enc: EncoderSpec, temperature: float):
    """Encode one prompt per class into a unit weight row.

    ``contexts`` is either a single shared PromptContext or a list with one
    context per class. Returns (weights, backward); backward maps row
    cotangents to a list of per-class context gradients (callers sum them
    when the context is shared).
    """
    per_class = isinstance(contexts, (list, tuple))
    if per_class and len(contexts) != len(token_seqs):
        raise ShapeError(f"{len(contexts)} contexts for {len(token_seqs)} classes")
    recs, rows = [], []
    for c, toks in enumerate(token_seqs):
        ctx = contexts[c] if per_class else contexts
        g, bwd = prefixed_feature_fwd(ctx.vectors, toks, enc)
        rows.append(g)
        recs.append(bwd)
    weights = ClassifierWeights(rows=T.cat_rows(rows), temperature=temperature)

    def backward(drows: Tensor2):
        return [
            bwd(T.rows_slice(drows, c, c + 1)) for c, bwd in enumerate(recs)
        ]

    return weights, backward


def class_weights(contexts, token_seqs, enc: EncoderSpec,
                  temperature: float) -> ClassifierWeights:
    w, _ = class_weights_fwd(contexts, token_seqs, enc, temperature)
    return w


def _normalize_rows(mat: Tensor2) -> Tensor2:
    rows = []
    for i in range(mat.rows):
        r = T.rows_slice(mat, i, i + 1)
        n = T.norm(r)
        if n == 0.0:
            raise DegenerateInputError("zero image feature")
        rows.append(T.scale(r, 1.0 / n))
    return T.cat_rows(rows)


def predict_probs(x: Tensor2, w: ClassifierWeights) -> Tensor2:
    """Probabilities for one image feature; both sides re-normalized."""
    return predict_batch(x, w)


def predict_batch(feats: Tensor2, w: ClassifierWeights) -> Tensor2:
    """softmax(cos(e_x, w_c) / temperature) per row of ``feats``."""
    if feats.cols != w.rows.cols:
        raise ShapeError(f"feature width {feats.cols} != weight width {w.rows.cols}")
    xn = _normalize_rows(feats)
    wn = _normalize_rows(w.rows)
    cos = T.matmul_nt(xn, wn)
    return T.softmax_rows(T.scale(cos, 1.0 / w.temperature))


def _xent_fwd_bwd(xn: Tensor2, labels, w: ClassifierWeights):
    """Summed cross-entropy over unit feature rows, plus d(loss)/d(weight rows).

    Weight rows are trusted unit vectors here (they come out of
    :func:`class_weights_fwd` normalized); the gradient chain through that
    normalization lives in the class-weights backward.
    """
    n, c = xn.rows, w.n_classes
    for y in labels:
        if not (0 <= y < c):
            raise DatasetError(f"label {y} out of range for {c} classes")
    cos = T.matmul_nt(xn, w.rows)
    inv_tau = 1.0 / w.temperature
    loss = 0.0
    dcos = array("d", bytes(8 * n * c))
    for i in range(n):
        base = i * c
        hi = max(cos.data[base + j] for j in range(c)) * inv_tau
        sumexp = 0.0
        for j in range(c):
            sumexp += math.exp(cos.data[base + j] * inv_tau - hi)
        lse = hi + math.log(sumexp)
        y = labels[i]
        loss += lse - cos.data[base + y] * inv_tau
        for j in range(c):
            p = math.exp(cos.data[base + j] * inv_tau - lse)
            dcos[base + j] = (p - (1.0 if j == y else 0.0)) * inv_tau
    drows = T.matmul_tn(Tensor2(n, c, dcos, check=False), xn)
    return loss, drows


# ---------------------------------------------------------------------------
# model state


class ModelState:
    """All learnable tensors of one method, with a flat name -> tensor view."""

    def __init__(self, method: str, n_tasks: int, classes_per_task, d_embed: int,
                 d_txt: int, temperature: float, L: int = 16, M: int = 8,
                 K: int | None = None, body: str = "linear", reduction: int = 1,
                 class_sampling_fraction: float = 1.0, seed: int = 1):
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {method!r}")
        self.method = method
        self.n_tasks = n_tasks
        self.classes_per_task = list(classes_per_task)
        self.d_embed = d_embed
        self.d_txt = d_txt
        self.temperature = temperature
        self.L, self.M = L, M
        self.K = K
        self.body = body
        self.reduction = reduction
        self.seed = seed
        self.cfg = None
        self.ctxs = None
        self.net = None
        self.task_ctx = None
        self.class_ctx = None

        rng = Rng(seed).spawn(f"init:{method}")
        if method == "coop-ca":
            self.ctxs = [init_context(L, d_embed, rng.spawn(f"task{t}"))
                         for t in range(n_tasks)]
        elif method == "coop-cs":
            self.ctxs = [
                [init_context(L, d_embed, rng.spawn(f"task{t}.class{c}"))
                 for c in range(self.classes_per_task[t])]
                for t in range(n_tasks)
            ]
        elif method == "coop-mt":
            self.ctxs = init_context(L, d_embed, rng.spawn("shared"))
        else:
            variant = method.split("-", 1)[1].upper()
            self.cfg = SoftCptConfig(
                variant=variant, L=L, M=M, K=K,
                class_sampling_fraction=class_sampling_fraction)
            self.net = MetaNet(self.cfg.d_in(d_txt), L, d_embed, body=body,
                               reduction=reduction, rng=rng.spawn("metanet"))
            if self.cfg.task_specific:
                blocks = [init_context(M, d_embed, rng.spawn(f"taskctx{t}"))
                          for t in range(n_tasks)]
                self.task_ctx = TaskContext(owner="per-task", blocks=blocks)
            else:
                self.task_ctx = TaskContext(
                    owner="shared",
                    blocks=[init_context(M, d_embed, rng.spawn("taskctx"))])
            if self.cfg.uses_class_features:
                if self.cfg.class_specific:
                    n_total = sum(self.classes_per_task)
                    blocks = [init_context(K, d_embed, rng.spawn(f"classctx{g}"))
                              for g in range(n_total)]
                    self.class_ctx = ClassContext(owner="per-class", blocks=blocks)
                else:
                    self.class_ctx = ClassContext(
                        owner="shared",
                        blocks=[init_context(K, d_embed, rng.spawn("classctx"))])

    # -- parameter plumbing -------------------------------------------------

    def class_offset(self, t: int) -> int:
        return sum(self.classes_per_task[:t])

    def named_parameters(self) -> dict:
        out = {}
        if self.method == "coop-ca":
            for t, ctx in enumerate(self.ctxs):
                out[f"ctx.task{t}"] = ctx
        elif self.method == "coop-cs":
            for t, per_class in enumerate(self.ctxs):
                for c, ctx in enumerate(per_class):
                    out[f"ctx.task{t}.class{c}"] = ctx
        elif self.method == "coop-mt":
            out["ctx"] = self.ctxs
        else:
            out.update(self.net.named_parameters())
            if self.M > 0:
                if self.task_ctx.owner == "shared":
                    out["taskctx.shared"] = self.task_ctx.blocks[0]
                else:
                    for t, blk in enumerate(self.task_ctx.blocks):
                        out[f"taskctx.task{t}"] = blk
            if self.class_ctx is not None:
                if self.class_ctx.owner == "shared":
                    out["classctx.shared"] = self.class_ctx.blocks[0]
                else:
                    for g, blk in enumerate(self.class_ctx.blocks):
                        out[f"classctx.class{g}"] = blk
        return out

    def set_parameter(self, name: str, value: Tensor2):
        current = self.named_parameters().get(name)
        if current is None:
            raise KeyError(name)
        if current.shape != value.shape:
            raise ShapeError(f"{name}: {value.shape} != {current.shape}")
        if name.startswith("metanet."):
            self.net.set_parameter(name, value)
        elif name == "ctx":
            self.ctxs = value
        elif name.startswith("ctx.task"):
            rest = name[len("ctx.task"):]
            if ".class" in rest:
                t_s, c_s = rest.split(".class")
                self.ctxs[int(t_s)][int(c_s)] = value
            else:
                self.ctxs[int(rest)] = value
        elif name == "taskctx.shared":
            self.task_ctx.blocks[0] = value
        elif name.startswith("taskctx.task"):
            self.task_ctx.blocks[int(name[len("taskctx.task"):])] = value
        elif name == "classctx.shared":
            self.class_ctx.blocks[0] = value
        elif name.startswith("classctx.class"):
            self.class_ctx.blocks[int(name[len("classctx.class"):])] = value
        else:
            raise KeyError(name)

    def trains_jointly(self) -> bool:
        """Joint multi-task loop vs. one independent loop per task."""
        return self.method not in ("coop-ca", "coop-cs")

    # -- evaluation-time weight construction ---------------------------------

    def coop_context(self, t: int):
        if self.method == "coop-ca":
            return PromptContext(self.ctxs[t])
        if self.method == "coop-mt":
            return PromptContext(self.ctxs)
        if self.method == "coop-cs":
            return [PromptContext(v) for v in self.ctxs[t]]
        raise ValueError(f"{self.method} has no free context")

    def generated_contexts(self, ts: TokenizedSuite):
        """Eval-mode contexts for every task (soft-shared methods, NA*)."""
        feats = []
        for t in range(self.n_tasks):
            g, _ = prefixed_feature_fwd(
                self.task_ctx.block_for(t), ts.task_tokens[t], ts.enc)
            feats.append(g)
        flat, _ = self.net.generate(T.cat_rows(feats), train_mode=False)
        return [
            context_from_flat(T.rows_slice(flat, t, t + 1), self.L, self.d_embed)
            for t in range(self.n_tasks)
        ], feats

    def eval_class_weights(self, ts: TokenizedSuite, t: int) -> ClassifierWeights:
        """Full-class weights for task ``t`` with everything in eval mode."""
        tau = self.temperature
        if self.method in ("coop-ca", "coop-cs", "coop-mt"):
            return class_weights(self.coop_context(t), ts.class_tokens[t], ts.enc, tau)
        if not self.cfg.uses_class_features:
            ctxs, _ = self.generated_contexts(ts)
            return class_weights(ctxs[t], ts.class_tokens[t], ts.enc, tau)
        g, _ = prefixed_feature_fwd(
            self.task_ctx.block_for(t), ts.task_tokens[t], ts.enc)
        offset = self.class_offset(t)
        per_class = []
        for c in range(self.classes_per_task[t]):
            h, _ = prefixed_feature_fwd(
                self.class_ctx.block_for(offset + c), ts.class_tokens[t][c], ts.enc)
            aug = augment_task_feature(g, h)
            flat, _ = self.net.generate(aug, train_mode=False)
            per_class.append(context_from_flat(flat, self.L, self.d_embed))
        return class_weights(per_class, ts.class_tokens[t], ts.enc, tau)


# ---------------------------------------------------------------------------
# the multi-task objective


def _grad_acc(store: dict, name: str, g: Tensor2):
    if name in store:
        buf = store[name]
        K.axpy(1.0, g.data, buf.data, g.size)
    else:
        store[name] = g.copy()


def multitask_loss(state: ModelState, ts: TokenizedSuite, batch,
                   train_mode: bool = True, class_subsets: dict | None = None,
                   want_grads: bool = True):
    """Loss of one batch and, when asked, gradients for every learnable.

    ``batch`` is a list of (task index, sample index) pairs; losses are
    summed per task first, then across tasks, unweighted. For the C*
    variants ``class_subsets`` (task -> sorted class ids) restricts both
    the generated prompts and the softmax support; every ground-truth
    label of the batch must be inside its task's subset.
    """
    by_task = {}
    for t, i in batch:
        by_task.setdefault(t, []).append(i)
    by_task = dict(sorted(by_task.items()))
    if not by_task:
        raise ValueError("empty batch")
    enc, suite = ts.enc, ts.suite
    tau = state.temperature

    per_task_loss = {}
    grads: dict = {}

    def xn_and_labels(t):
        idxs = by_task[t]
        b = suite.bundles[t]
        xn = _normalize_rows(
            T.cat_rows([T.rows_slice(b.features, i, i + 1) for i in idxs]))
        return xn, [b.labels[i] for i in idxs]

    if state.method in ("coop-ca", "coop-cs", "coop-mt"):
        for t in by_task:
            contexts = state.coop_context(t)
            w, w_bwd = class_weights_fwd(contexts, ts.class_tokens[t], enc, tau)
            xn, labels = xn_and_labels(t)
            loss_t, drows = _xent_fwd_bwd(xn, labels, w)
            per_task_loss[t] = loss_t
            if not want_grads:
                continue
            ds_list = w_bwd(drows)
            if state.method == "coop-cs":
                for c, ds in enumerate(ds_list):
                    _grad_acc(grads, f"ctx.task{t}.class{c}", ds)
            else:
                name = "ctx" if state.method == "coop-mt" else f"ctx.task{t}"
                for ds in ds_list:
                    _grad_acc(grads, name, ds)
        total = sum(per_task_loss[t] for t in sorted(per_task_loss))
        return total, per_task_loss, (grads if want_grads else None)

    # soft-shared methods
    cfg = state.cfg
    d_txt = state.d_txt
    flatlen = state.L * state.d_embed

    tfeat, tf_bwd = [], []
    for t in range(state.n_tasks):
        g, bwd = prefixed_feature_fwd(
            state.task_ctx.block_for(t), ts.task_tokens[t], enc)
        tfeat.append(g)
        tf_bwd.append(bwd)

    if not cfg.uses_class_features:
        gen_in = T.cat_rows(tfeat)
        flat, gen_bwd = state.net.generate(gen_in, train_mode)
        w_bwds = {}
        drows_by_task = {}
        for t in by_task:
            ctx = context_from_flat(
                T.rows_slice(flat, t, t + 1), state.L, state.d_embed)
            w, w_bwd = class_weights_fwd(ctx, ts.class_tokens[t], enc, tau)
            xn, labels = xn_and_labels(t)
            loss_t, drows = _xent_fwd_bwd(xn, labels, w)
            per_task_loss[t] = loss_t
            w_bwds[t] = w_bwd
            drows_by_task[t] = drows
        total = sum(per_task_loss[t] for t in sorted(per_task_loss))
        if not want_grads:
            return total, per_task_loss, None
        dflat_rows = []
        for t in range(state.n_tasks):
            if t in by_task:
                ds_total = Tensor2.zeros(state.L, state.d_embed)
                for ds in w_bwds[t](drows_by_task[t]):
                    K.axpy(1.0, ds.data, ds_total.data, ds.size)
                dflat_rows.append(T.reshape(ds_total, 1, flatlen))
            else:
                dflat_rows.append(Tensor2.zeros(1, flatlen))
        net_grads, dgen_in = gen_bwd(T.cat_rows(dflat_rows))
        for name, g in net_grads.items():
            _grad_acc(grads, name, g)
        if state.M > 0:
            for t in range(state.n_tasks):
                du = tf_bwd[t](T.rows_slice(dgen_in, t, t + 1))
                name = ("taskctx.shared" if state.task_ctx.owner == "shared"
                        else f"taskctx.task{t}")
                _grad_acc(grads, name, du)
        return total, per_task_loss, grads

    # C* variants: one generator row per (task, class) pair
    pair_index = []  # (t, class id within task)
    cfeat, cf_bwd = {}, {}
    for t in by_task:
        subset = (class_subsets or {}).get(t)
        if subset is None:
            subset = list(range(state.classes_per_task[t]))
        offset = state.class_offset(t)
        for c in subset:
            g, bwd = prefixed_feature_fwd(
                state.class_ctx.block_for(offset + c), ts.class_tokens[t][c], enc)
            cfeat[(t, c)] = g
            cf_bwd[(t, c)] = bwd
            pair_index.append((t, c))
    gen_in = T.cat_rows([augment_task_feature(tfeat[t], cfeat[(t, c)])
                         for t, c in pair_index])
    flat, gen_bwd = state.net.generate(gen_in, train_mode)
    row_of = {pair: r for r, pair in enumerate(pair_index)}

    w_bwds, drows_by_task, subsets = {}, {}, {}
    for t in by_task:
        subset = sorted({c for tt, c in pair_index if tt == t})
        subsets[t] = subset
        ctx_list = [
            context_from_flat(
                T.rows_slice(flat, row_of[(t, c)], row_of[(t, c)] + 1),
                state.L, state.d_embed)
            for c in subset
        ]
        tokens = [ts.class_tokens[t][c] for c in subset]
        w, w_bwd = class_weights_fwd(ctx_list, tokens, enc, tau)
        xn, labels = xn_and_labels(t)
        pos = {c: p for p, c in enumerate(subset)}
        try:
            mapped = [pos[y] for y in labels]
        except KeyError as exc:
            raise DatasetError(
                f"batch label {exc.args[0]} missing from class subset of task {t}"
            ) from exc
        loss_t, drows = _xent_fwd_bwd(xn, mapped, w)
        per_task_loss[t] = loss_t
        w_bwds[t] = w_bwd
        drows_by_task[t] = drows
    total = sum(per_task_loss[t] for t in sorted(per_task_loss))
    if not want_grads:
        return total, per_task_loss, None

    dflat_rows = [Tensor2.zeros(1, flatlen) for _ in pair_index]
    for t in by_task:
        ds_list = w_bwds[t](drows_by_task[t])
        for p, c in enumerate(subsets[t]):
            dflat_rows[row_of[(t, c)]] = T.reshape(ds_list[p], 1, flatlen)
    net_grads, dgen_in = gen_bwd(T.cat_rows(dflat_rows))
    for name, g in net_grads.items():
        _grad_acc(grads, name, g)
    dg_task = {t: Tensor2.zeros(1, d_txt) for t in by_task}
    for r, (t, c) in enumerate(pair_index):
        row = T.rows_slice(dgen_in, r, r + 1)
        K.axpy(1.0, T.cols_slice(row, 0, d_txt).data, dg_task[t].data, d_txt)
        dh = T.cols_slice(row, d_txt, 2 * d_txt)
        dv = cf_bwd[(t, c)](dh)
        name = ("classctx.shared" if state.class_ctx.owner == "shared"
                else f"classctx.class{state.class_offset(t) + c}")
        _grad_acc(grads, name, dv)
    if state.M > 0:
        for t in by_task:
            du = tf_bwd[t](dg_task[t])
            name = ("taskctx.shared" if state.task_ctx.owner == "shared"
                    else f"taskctx.task{t}")
            _grad_acc(grads, name, du)
    return total, per_task_loss, grads


# ---------------------------------------------------------------------------
# checkpoints


def save_state(state: ModelState, path: str, extra_meta: dict | None = None,
               enc: EncoderSpec | None = None, overwrite: bool = False):
    """Checkpoint directory: manifest plus one float64 block per tensor."""
    if os.path.exists(path):
        if not overwrite:
            raise FileExistsError(path)
    tmp = f"{path}.tmp{os.getpid()}"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(os.path.join(tmp, "tensors"))
    params = {}
    for i, (name, tens) in enumerate(state.named_parameters().items()):
        rel = f"tensors/p{i:04d}.bin"
        write_tensor_block(os.path.join(tmp, rel), tens, "f64")
        params[name] = rel
    buffers = {}
    if state.net is not None and state.net.body == "mlp":
        for bname, tens in (("bn_mean", state.net.bn_mean),
                            ("bn_var", state.net.bn_var)):
            rel = f"tensors/{bname}.bin"
            write_tensor_block(os.path.join(tmp, rel), tens, "f64")
            buffers[bname] = rel
    manifest = {
        "format": "mtprompt-checkpoint",
        "version": 1,
        "method": state.method,
        "n_tasks": state.n_tasks,
        "classes_per_task": state.classes_per_task,
        "dims": {"L": state.L, "M": state.M, "K": state.K,
                 "d_embed": state.d_embed, "d_txt": state.d_txt},
        "body": state.body,
        "reduction": state.reduction,
        "temperature": state.temperature,
        "seed": state.seed,
        "class_sampling_fraction": (
            state.cfg.class_sampling_fraction if state.cfg else 1.0),
        "augment_order": AUGMENT_ORDER,
        "encoder": enc.to_json_dict() if enc else None,
        "parameters": params,
        "buffers": buffers,
    }
    if extra_meta:
        manifest["extra"] = extra_meta
    with open(os.path.join(tmp, "checkpoint.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(tmp, path)


def load_state(path: str):
    """Returns (state, manifest)."""
    with open(os.path.join(path, "checkpoint.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    dims = manifest["dims"]
    state = ModelState(
        method=manifest["method"],
        n_tasks=manifest["n_tasks"],
        classes_per_task=manifest["classes_per_task"],
        d_embed=dims["d_embed"],
        d_txt=dims["d_txt"],
        temperature=manifest["temperature"],
        L=dims["L"], M=dims["M"], K=dims["K"],
        body=manifest["body"],
        reduction=manifest["reduction"],
        class_sampling_fraction=manifest.get("class_sampling_fraction", 1.0),
        seed=manifest.get("seed", 1),
    )
    for name, rel in manifest["parameters"].items():
        state.set_parameter(name, read_tensor_block(os.path.join(path, rel)))
    for bname, rel in manifest.get("buffers", {}).items():
        setattr(state.net, bname, read_tensor_block(os.path.join(path, rel)))
    return state, manifest
