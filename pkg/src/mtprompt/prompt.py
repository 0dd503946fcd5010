"""Learnable context blocks and prompt assembly.

A prompt is always ``context block ++ name tokens``; the context is a
prefix, never inserted mid-sequence. Three kinds of context exist: the
class-prompt context (length L, generated per task in the soft-shared
methods, a free parameter in the single-task and hard-shared ones), the
task context (length M, prepended to task names), and the optional class
context (length K) used only by the variants that feed class features into
the generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .encoder import TokenSequence
from .errors import ShapeError
from .tensor import Rng, Tensor2

VARIANTS = ("NATA", "NATS", "CATA", "CSTA", "CATS", "CSTS")

CONTEXT_INIT_STD = 0.02


def init_context(rows: int, cols: int, rng: Rng, std: float = CONTEXT_INIT_STD) -> Tensor2:
    """Zero-mean Gaussian init, the plain random scheme used everywhere."""
    if rows < 0 or cols <= 0:
        raise ShapeError(f"bad context shape ({rows}, {cols})")
    return rng.normal_tensor(rows, cols, std)


@dataclass
class PromptContext:
    """The L x d_embed block prepended to class-name tokens.

    ``learnable`` is False for generated contexts: in the soft-shared
    methods this block is an output of the generator, never a parameter.
    """

    vectors: Tensor2
    learnable: bool = True

    @property
    def length(self) -> int:
        return self.vectors.rows

    @property
    def width(self) -> int:
        return self.vectors.cols


@dataclass
class TaskContext:
    """M x d_embed block(s) prepended to task-name tokens.

    ``owner`` is "shared" (one block for every task) or "per-task"
    (one block per task). M = 0 encodes the no-task-context case.
    """

    owner: str
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        if self.owner not in ("shared", "per-task"):
            raise ValueError(f"owner must be shared or per-task, got {self.owner!r}")
        if self.owner == "shared" and len(self.blocks) != 1:
            raise ShapeError("shared task context needs exactly one block")

    @property
    def length(self) -> int:
        return self.blocks[0].rows

    def block_for(self, t: int) -> Tensor2:
        if self.owner == "shared":
            return self.blocks[0]
        if not (0 <= t < len(self.blocks)):
            raise IndexError(f"task index {t} out of range ({len(self.blocks)} tasks)")
        return self.blocks[t]


@dataclass
class ClassContext:
    """K x d_embed block(s) prepended to class-name tokens when extracting
    class features. ``owner`` is "shared" or "per-class"; per-class blocks
    are indexed by a suite-global class id."""

    owner: str
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        if self.owner not in ("shared", "per-class"):
            raise ValueError(f"owner must be shared or per-class, got {self.owner!r}")
        if self.owner == "shared" and len(self.blocks) != 1:
            raise ShapeError("shared class context needs exactly one block")

    @property
    def length(self) -> int:
        return self.blocks[0].rows

    def block_for(self, global_class: int) -> Tensor2:
        if self.owner == "shared":
            return self.blocks[0]
        return self.blocks[global_class]


@dataclass(frozen=True)
class SoftCptConfig:
    """One of the six soft-sharing configurations.

    The variant name is <class-feature mode><task-context mode>: NA/CA/CS
    for no, class-agnostic, or class-specified class features, and TA/TS
    for a task-agnostic or task-specified task context. K is the class
    context length and must be present exactly when class features are in
    play; ``class_sampling_fraction`` subsamples class names per step in
    those variants to bound the backward cost.
    """

    variant: str
    L: int = 16
    M: int = 8
    K: int | None = None
    class_sampling_fraction: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.L < 1:
            raise ShapeError("L must be >= 1")
        if self.M < 0:
            raise ShapeError("M must be >= 0")
        if self.uses_class_features:
            if self.K is None or self.K < 1:
                raise ShapeError(f"{self.variant} needs K >= 1")
        elif self.K is not None:
            raise ShapeError(f"{self.variant} takes no class context, got K={self.K}")
        if not (0.0 < self.class_sampling_fraction <= 1.0):
            raise ValueError("class_sampling_fraction must be in (0, 1]")

    @property
    def uses_class_features(self) -> bool:
        return self.variant.startswith(("CA", "CS"))

    @property
    def class_specific(self) -> bool:
        return self.variant.startswith("CS")

    @property
    def task_specific(self) -> bool:
        return self.variant.endswith("TS")

    def d_in(self, d_txt: int) -> int:
        """Generator input width: doubled when class features are appended."""
        return 2 * d_txt if self.uses_class_features else d_txt

    def context_census(self, n_tasks: int, n_classes_total: int) -> dict:
        """How many distinct task/class context blocks the variant learns."""
        return {
            "task_contexts": n_tasks if self.task_specific else 1,
            "class_contexts": (
                None
                if not self.uses_class_features
                else (n_classes_total if self.class_specific else 1)
            ),
        }


def build_class_prompt(ctx: PromptContext, class_tokens: TokenSequence) -> TokenSequence:
    """[context rows] ++ [class-name tokens]; L = 0 leaves tokens unchanged."""
    if ctx.length and ctx.width != class_tokens.width:
        raise ShapeError(f"context width {ctx.width} != token width {class_tokens.width}")
    if ctx.length == 0:
        return class_tokens
    return TokenSequence(T.cat_rows([ctx.vectors, class_tokens.matrix]))


def build_task_prompt(tctx: TaskContext, task_tokens: TokenSequence, t: int) -> TokenSequence:
    """[task-context rows] ++ [task-name tokens] for task ``t``."""
    block = tctx.block_for(t)
    if block.rows == 0:
        return task_tokens
    if block.cols != task_tokens.width:
        raise ShapeError(f"task context width {block.cols} != token width {task_tokens.width}")
    return TokenSequence(T.cat_rows([block, task_tokens.matrix]))


def augment_task_feature(task_feat: Tensor2, class_feat: Tensor2) -> Tensor2:
    """Concatenate (task ++ class) features; generator input for C* variants.

    Task features come first; the ordering is fixed and recorded in
    checkpoint headers so exports stay unambiguous.
    """
    if task_feat.rows != 1 or class_feat.rows != 1:
        raise ShapeError("features must be row vectors")
    if task_feat.cols != class_feat.cols:
        raise ShapeError(f"feature widths differ: {task_feat.cols} vs {class_feat.cols}")
    return T.cat_cols([task_feat, class_feat])
