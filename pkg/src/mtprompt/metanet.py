"""The shared context generator.

Task names (optionally prefixed with a learnable task context) run through
the frozen encoder to produce unit-norm task features; a small learnable
sub-network then maps each feature to the flat class-prompt context, which
is cut into L tokens of width d_embed (chunk l occupies the flat index
range [(l-1)*d_embed, l*d_embed)).

Two sub-network bodies exist. The linear body is a single bias-free matrix
W of shape d_in x (d_embed*L); bias-free is load-bearing, because the
one-step update decomposition checked in :mod:`mtprompt.evals` is exact
only for a pure linear map. The MLP body is linear -> batch norm -> relu
-> linear with the first layer reduced by an integer ratio; batch
statistics come from the task features present in the training step and
are frozen for evaluation.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass

from . import _kernels as K
from . import tensor as T
from .encoder import EncoderSpec, TokenSequence, encode_bwd, encode_fwd
from .errors import ShapeError
from .prompt import PromptContext, SoftCptConfig, TaskContext
from .tensor import Rng, Tensor2

_BN_EPS = 1e-5
WEIGHT_INIT_STD = 0.02


@dataclass
class TaskFeature:
    g: Tensor2  # 1 x d_txt, unit norm
    task: int


class MetaNet:
    """Learnable sub-network mapping task features to prompt contexts."""

    def __init__(self, d_in: int, L: int, d_embed: int, body: str = "linear",
                 reduction: int = 1, rng: Rng | None = None):
        if body not in ("linear", "mlp"):
            raise ValueError(f"body must be linear or mlp, got {body!r}")
        if reduction < 1:
            raise ValueError("reduction must be >= 1")
        self.d_in = d_in
        self.L = L
        self.d_embed = d_embed
        self.body = body
        self.reduction = reduction
        self.d_out = d_embed * L
        rng = rng or Rng(0)
        if body == "linear":
            self.w = init_weight(d_in, self.d_out, rng)
        else:
            self.hidden = max(1, d_in // reduction)
            self.w1 = init_weight(d_in, self.hidden, rng.spawn("w1"))
            self.w2 = init_weight(self.hidden, self.d_out, rng.spawn("w2"))
            self.gamma = Tensor2.from_flat(1, self.hidden, [1.0] * self.hidden)
            self.beta = Tensor2.zeros(1, self.hidden)
            # most recent training-batch statistics, used at evaluation
            self.bn_mean = Tensor2.zeros(1, self.hidden)
            self.bn_var = Tensor2.from_flat(1, self.hidden, [1.0] * self.hidden)

    def named_parameters(self) -> dict:
        if self.body == "linear":
            return {"metanet.w": self.w}
        return {
            "metanet.w1": self.w1,
            "metanet.gamma": self.gamma,
            "metanet.beta": self.beta,
            "metanet.w2": self.w2,
        }

    def set_parameter(self, name: str, value: Tensor2):
        attr = name.split(".", 1)[1]
        if getattr(self, attr).shape != value.shape:
            raise ShapeError(f"shape mismatch for {name}")
        setattr(self, attr, value)

    # -- forward / backward -------------------------------------------------

    def generate(self, feats: Tensor2, train_mode: bool = True):
        """Map a batch of input features (rows) to flat contexts (rows).

        Returns (contexts, backward) where backward(cot) gives
        (param_grads, dfeats). In train mode the MLP body recomputes batch
        statistics from ``feats`` and stores them; eval mode reuses the
        stored ones and the backward closure must not be used.
        """
        if feats.cols != self.d_in:
            raise ShapeError(f"generator input width {feats.cols} != {self.d_in}")
        if self.body == "linear":
            out = T.matmul(feats, self.w)

            def backward(cot: Tensor2):
                dw = T.matmul_tn(feats, cot)
                dfeats = T.matmul_nt(cot, self.w)
                return {"metanet.w": dw}, dfeats

            return out, backward
        return self._generate_mlp(feats, train_mode)

    def _generate_mlp(self, feats: Tensor2, train_mode: bool):
        n, h = feats.rows, self.hidden
        pre = T.matmul(feats, self.w1)
        if train_mode:
            mean = T.mean_rows(pre)
            centered = T.sub(pre, T.cat_rows([mean] * n))
            var = T.mean_rows(T.hadamard(centered, centered))
            self.bn_mean, self.bn_var = mean, var
        else:
            mean, var = self.bn_mean, self.bn_var
            centered = T.sub(pre, T.cat_rows([mean] * n))
        inv_std = Tensor2.from_flat(
            1, h, [1.0 / math.sqrt(var.data[j] + _BN_EPS) for j in range(h)]
        )
        xhat = T.hadamard(centered, T.cat_rows([inv_std] * n))
        z = T.add(
            T.hadamard(xhat, T.cat_rows([self.gamma] * n)),
            T.cat_rows([self.beta] * n),
        )
        mask = Tensor2.from_flat(
            z.rows, z.cols, [1.0 if v > 0.0 else 0.0 for v in z.data]
        )
        act = T.hadamard(z, mask)
        out = T.matmul(act, self.w2)

        def backward(cot: Tensor2):
            if not train_mode:
                raise RuntimeError("backward through an eval-mode generator pass")
            dact = T.matmul_nt(cot, self.w2)
            dw2 = T.matmul_tn(act, cot)
            dz = T.hadamard(dact, mask)
            dgamma = _col_sums(T.hadamard(dz, xhat))
            dbeta = _col_sums(dz)
            dxhat = T.hadamard(dz, T.cat_rows([self.gamma] * n))
            # batch-norm input gradient with batch statistics in the graph
            m1 = _col_means(dxhat)
            m2 = _col_means(T.hadamard(dxhat, xhat))
            dpre = T.hadamard(
                T.sub(T.sub(dxhat, T.cat_rows([m1] * n)),
                      T.hadamard(xhat, T.cat_rows([m2] * n))),
                T.cat_rows([inv_std] * n),
            )
            dw1 = T.matmul_tn(feats, dpre)
            dfeats = T.matmul_nt(dpre, self.w1)
            grads = {
                "metanet.w1": dw1,
                "metanet.gamma": dgamma,
                "metanet.beta": dbeta,
                "metanet.w2": dw2,
            }
            return grads, dfeats

        return out, backward


def _col_sums(t: Tensor2) -> Tensor2:
    out = array("d", bytes(8 * t.cols))
    for i in range(t.rows):
        K.axpy(1.0, t.row(i), out, t.cols)
    return Tensor2(1, t.cols, out, check=False)


def _col_means(t: Tensor2) -> Tensor2:
    return T.mean_rows(t)


def init_weight(rows: int, cols: int, rng: Rng, std: float = WEIGHT_INIT_STD) -> Tensor2:
    """Generator weights share the small Gaussian init used for contexts,
    so freshly generated contexts start near zero."""
    return rng.normal_tensor(rows, cols, std)


def prefixed_feature_fwd(block: Tensor2, tokens: TokenSequence, enc: EncoderSpec):
    """Unit-norm feature of [context block ++ name tokens] with a backward
    closure onto the block. Name-token gradients are dropped; those
    embeddings are frozen."""
    if block.rows:
        seq = TokenSequence(T.cat_rows([block, tokens.matrix]))
    else:
        seq = tokens
    raw, tape = encode_fwd(seq, enc)
    g = T.l2_normalize(raw)
    m = block.rows

    def backward(dg: Tensor2) -> Tensor2:
        draw = T.l2_normalize_vjp(raw, dg)
        dtokens = encode_bwd(seq, enc, tape, draw)
        return T.rows_slice(dtokens, 0, m)

    return g, backward


def task_feature_fwd(tctx: TaskContext, task_tokens: TokenSequence, t: int,
                     enc: EncoderSpec):
    """Task feature g_t plus the backward closure onto task t's context block."""
    g, backward = prefixed_feature_fwd(tctx.block_for(t), task_tokens, enc)
    return TaskFeature(g=g, task=t), backward


def task_feature(tctx: TaskContext, task_tokens: TokenSequence, t: int,
                 enc: EncoderSpec) -> TaskFeature:
    feat, _ = task_feature_fwd(tctx, task_tokens, t, enc)
    return feat


def context_from_flat(flat_row: Tensor2, L: int, d_embed: int) -> PromptContext:
    """Cut a flat generated vector into L context tokens (row-major)."""
    if flat_row.size != L * d_embed:
        raise ShapeError(f"flat context of {flat_row.size} != {L}*{d_embed}")
    return PromptContext(vectors=T.reshape(flat_row, L, d_embed), learnable=False)


def generate_context(feat: Tensor2, net: MetaNet) -> PromptContext:
    """Single-input convenience wrapper over :meth:`MetaNet.generate`."""
    row = feat if feat.rows == 1 else T.reshape(feat, 1, feat.size)
    out, _ = net.generate(row, train_mode=False)
    return context_from_flat(out, net.L, net.d_embed)


def lipschitz_bound(net: MetaNet) -> float:
    """Largest singular value of the linear body; the soft-sharing constant."""
    if net.body != "linear":
        raise ValueError("spectral bound is defined for the linear body")
    return T.spectral_norm(net.w)


def param_count(method: str, n_tasks: int, n_classes_total: int,
                d_embed: int, d_txt: int, L: int = 16, M: int = 8,
                K: int | None = None, body: str = "linear",
                reduction: int = 1) -> int:
    """Exact learnable-parameter census for every supported method."""
    if method == "coop-ca":
        return n_tasks * L * d_embed
    if method == "coop-cs":
        return n_classes_total * L * d_embed
    if method == "coop-mt":
        return L * d_embed
    if not method.startswith("softcpt-"):
        raise ValueError(f"unknown method {method!r}")
    cfg = SoftCptConfig(variant=method.split("-", 1)[1].upper(), L=L, M=M, K=K)
    d_in = cfg.d_in(d_txt)
    d_out = d_embed * L
    if body == "linear":
        total = d_in * d_out
    else:
        hidden = max(1, d_in // reduction)
        total = d_in * hidden + 2 * hidden + hidden * d_out
    census = cfg.context_census(n_tasks, n_classes_total)
    total += census["task_contexts"] * M * d_embed
    if census["class_contexts"] is not None:
        total += census["class_contexts"] * cfg.K * d_embed
    return total
