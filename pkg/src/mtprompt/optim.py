"""Plain SGD with a cosine schedule, batch construction, training loops.

No momentum and no weight decay: the one-step update decomposition that
:mod:`mtprompt.evals` verifies models the vanilla update, and the training
defaults (lr 0.002, batch 32, 50 epochs) stay faithful to it. The schedule
is stepped per iteration. Single-task methods (coop-ca, coop-cs) run one
independent loop per task over that task's samples; the multi-task methods
run one joint loop over the shuffled union of all tasks' train sets.

Training is deterministic given (seed, config, dataset): every random
choice flows from one counter-based stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import _kernels as K
from .data import TokenizedSuite
from .errors import TrainingDiverged
from .model import METHODS, ModelState, multitask_loss
from .tensor import Rng, Tensor2


@dataclass
class TrainConfig:
    method: str = "softcpt-nata"
    lr0: float = 0.002
    epochs: int = 50
    batch_size: int = 32
    seed: int = 1
    L: int = 16
    M: int = 8
    K: int | None = None
    body: str = "linear"
    reduction: int = 1
    class_sampling_fraction: float = 1.0
    batch_mode: str = "mixed"  # or "round-robin"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lr0 < 0:
            raise ValueError("lr0 must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")
        if self.batch_mode not in ("mixed", "round-robin"):
            raise ValueError(f"batch_mode {self.batch_mode!r}")


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """0.5 * lr0 * (1 + cos(pi * step / total_steps))."""
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def make_batches(samples: list, batch_size: int, rng: Rng,
                 mode: str = "mixed") -> list:
    """One epoch of batches over (task, index) pairs.

    ``mixed`` shuffles the union uniformly so batches mix tasks in
    proportion to their share; ``round-robin`` shuffles within each task
    and serves single-task batches in task rotation. Every sample appears
    exactly once per epoch either way.
    """
    if not samples:
        raise ValueError("empty train set")
    if mode == "mixed":
        order = list(samples)
        rng.shuffle(order)
        return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    per_task: dict = {}
    for pair in samples:
        per_task.setdefault(pair[0], []).append(pair)
    queues = []
    for t in sorted(per_task):
        q = per_task[t]
        rng.shuffle(q)
        queues.append([q[i:i + batch_size] for i in range(0, len(q), batch_size)])
    batches = []
    depth = max(len(q) for q in queues)
    for d in range(depth):
        for q in queues:
            if d < len(q):
                batches.append(q[d])
    return batches


@dataclass
class TrainResult:
    state: ModelState
    log: list = field(default_factory=list)
    final_loss: float = math.nan


def _sgd_apply(state: ModelState, grads: dict, lr: float):
    for name, g in grads.items():
        p = state.named_parameters()[name]
        buf = p.copy()
        K.axpy(-lr, g.data, buf.data, g.size)
        state.set_parameter(name, Tensor2(p.rows, p.cols, buf.data, check=False))


def _class_subsets(state: ModelState, ts: TokenizedSuite, batch, rng: Rng):
    """Per-step class subsets for the C* variants: the batch's ground-truth
    classes plus a random fill up to ceil(fraction * C_t)."""
    cfg = state.cfg
    if cfg is None or not cfg.uses_class_features:
        return None
    if cfg.class_sampling_fraction >= 1.0:
        return None
    subsets = {}
    by_task: dict = {}
    for t, i in batch:
        by_task.setdefault(t, set()).add(ts.suite.bundles[t].labels[i])
    for t in sorted(by_task):
        n_c = state.classes_per_task[t]
        target = max(len(by_task[t]), math.ceil(cfg.class_sampling_fraction * n_c))
        chosen = set(by_task[t])
        pool = [c for c in range(n_c) if c not in chosen]
        need = min(target - len(chosen), len(pool))
        if need > 0:
            picks = rng.spawn(f"fill.t{t}").sample_indices(len(pool), need)
            chosen.update(pool[i] for i in picks)
        subsets[t] = sorted(chosen)
    return subsets


def _log_line(step, lr, per_task_loss, n_tasks, total):
    cells = [str(step), f"{lr:.10g}"]
    for t in range(n_tasks):
        cells.append(f"{per_task_loss[t]:.10g}" if t in per_task_loss else "-")
    cells.append(f"{total:.10g}")
    return "\t".join(cells)


def _run_loop(state: ModelState, ts: TokenizedSuite, samples, config: TrainConfig,
              rng: Rng, log: list, step_offset: int = 0) -> float:
    n_epoch_batches = math.ceil(len(samples) / config.batch_size)
    total_steps = config.epochs * n_epoch_batches
    step = 0
    last = math.nan
    for epoch in range(config.epochs):
        for batch in make_batches(samples, config.batch_size,
                                  rng.spawn(f"epoch{epoch}"), config.batch_mode):
            lr = cosine_lr(step, total_steps, config.lr0)
            subsets = _class_subsets(state, ts, batch, rng.spawn(f"subset{step}"))
            total, per_task, grads = multitask_loss(
                state, ts, batch, train_mode=True, class_subsets=subsets)
            if not math.isfinite(total):
                raise TrainingDiverged(f"non-finite loss {total} at step {step}")
            if config.lr0 != 0.0:
                _sgd_apply(state, grads, lr)
            log.append(_log_line(step_offset + step, lr, per_task,
                                 state.n_tasks, total))
            last = total
            step += 1
    return last


def train(config: TrainConfig, ts: TokenizedSuite,
          train_indices: dict | None = None) -> TrainResult:
    """Train ``config.method`` on the suite's train split (or on the given
    per-task index lists, e.g. a few-shot subset)."""
    suite = ts.suite
    state = ModelState(
        method=config.method,
        n_tasks=suite.n_tasks,
        classes_per_task=[b.n_classes for b in suite.bundles],
        d_embed=ts.enc.d_embed,
        d_txt=suite.d_txt,
        temperature=suite.temperature,
        L=config.L, M=config.M, K=config.K,
        body=config.body, reduction=config.reduction,
        class_sampling_fraction=config.class_sampling_fraction,
        seed=config.seed,
    )
    rng = Rng(config.seed).spawn(f"train:{config.method}")
    per_task_samples = {
        t: [(t, i) for i in (train_indices or {}).get(t, suite.bundles[t].splits["train"])]
        for t in range(suite.n_tasks)
    }
    log: list = []
    result = TrainResult(state=state, log=log)
    if state.trains_jointly():
        union = [pair for t in sorted(per_task_samples)
                 for pair in per_task_samples[t]]
        result.final_loss = _run_loop(state, ts, union, config, rng, log)
    else:
        offset = 0
        last = 0.0
        for t in range(suite.n_tasks):
            samples = per_task_samples[t]
            last += _run_loop(state, ts, samples, config,
                              rng.spawn(f"task{t}"), log, step_offset=offset)
            offset += config.epochs * math.ceil(len(samples) / config.batch_size)
        result.final_loss = last
    return result
