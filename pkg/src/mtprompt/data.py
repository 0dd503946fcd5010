"""Task bundles, few-shot sampling, and the suite interchange format.

A *suite* is a set of classification tasks sharing one feature space:
each task carries its name, class names, precomputed image features
(frozen; the engine never sees pixels), integer labels, and train/val/test
index splits. Suites are stored as a directory with a ``suite.json``
manifest plus one binary block per tensor.

Tensor block layout (little-endian): 16-byte header of magic ``PTSH``,
version u16, rows u32, cols u32, dtype u16 (0 = float32, 1 = float64),
followed by the row-major payload. Suite tensors are always float32;
float64 blocks appear only in checkpoints.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import struct
import sys
from array import array
from dataclasses import dataclass, field

from . import tensor as T
from .encoder import EncoderSpec, TokenSequence, encode, tokenize_and_embed
from .errors import DatasetError, SuiteFormatError
from .prompt import PromptContext, build_class_prompt, init_context
from .tensor import Rng, Tensor2

_MAGIC = b"PTSH"
_BLOCK_VERSION = 1
_SUITE_FORMAT = "mtprompt-suite"
_SUITE_VERSION = 1
_DTYPE_F32 = 0
_DTYPE_F64 = 1


# ---------------------------------------------------------------------------
# bundles


@dataclass
class TaskBundle:
    task_name: str
    class_names: list
    features: Tensor2  # N x d_txt
    labels: list  # N ints in [0, C)
    splits: dict  # {"train"|"val"|"test": [indices]}
    task_tokens: Tensor2 | None = None  # optional pre-embedded name tokens
    class_tokens: list | None = None  # optional, one block per class

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_samples(self) -> int:
        return self.features.rows

    def validate(self, d_txt: int | None = None, d_embed: int | None = None):
        if self.n_classes < 2:
            raise DatasetError(f"task {self.task_name!r} needs >= 2 classes")
        if len(self.labels) != self.n_samples:
            raise DatasetError(f"task {self.task_name!r}: {len(self.labels)} labels "
                               f"for {self.n_samples} samples")
        if d_txt is not None and self.features.cols != d_txt:
            raise SuiteFormatError(
                "width-mismatch",
                f"task {self.task_name!r} features width {self.features.cols} != {d_txt}")
        for y in self.labels:
            if not (0 <= y < self.n_classes):
                raise DatasetError(f"task {self.task_name!r}: label {y} out of range")
        seen = set()
        for name, idxs in self.splits.items():
            for i in idxs:
                if not (0 <= i < self.n_samples):
                    raise DatasetError(f"{name} index {i} out of range")
                if i in seen:
                    raise DatasetError(f"index {i} appears in two splits")
                seen.add(i)
        if self.class_tokens is not None and len(self.class_tokens) != self.n_classes:
            raise DatasetError(f"task {self.task_name!r}: class token block count "
                               f"{len(self.class_tokens)} != {self.n_classes}")
        if d_embed:
            for blk in (self.class_tokens or []):
                if blk.cols != d_embed:
                    raise SuiteFormatError(
                        "width-mismatch",
                        f"class token width {blk.cols} != d_embed {d_embed}")
            if self.task_tokens is not None and self.task_tokens.cols != d_embed:
                raise SuiteFormatError(
                    "width-mismatch",
                    f"task token width {self.task_tokens.cols} != d_embed {d_embed}")


@dataclass
class Suite:
    bundles: list
    d_txt: int
    temperature: float = 0.01
    d_embed: int = 0  # width of optional token blocks; 0 when absent
    features_l2_normalized: bool = False
    token_embed_seed: int = 0

    @property
    def n_tasks(self) -> int:
        return len(self.bundles)

    @property
    def n_classes_total(self) -> int:
        return sum(b.n_classes for b in self.bundles)

    def class_offsets(self) -> list:
        """Suite-global class id of each task's class 0."""
        offs, acc = [], 0
        for b in self.bundles:
            offs.append(acc)
            acc += b.n_classes
        return offs

    def validate(self):
        if not self.bundles:
            raise DatasetError("suite has no tasks")
        for b in self.bundles:
            b.validate(d_txt=self.d_txt, d_embed=self.d_embed or None)


# ---------------------------------------------------------------------------
# few-shot sampling and base/new splitting


@dataclass
class FewShotSplit:
    k: int
    seed: int
    per_class: dict = field(default_factory=dict)  # class -> [sample indices]

    @property
    def indices(self) -> list:
        out = []
        for c in sorted(self.per_class):
            out.extend(self.per_class[c])
        return out


def sample_few_shot(bundle: TaskBundle, k: int, seed: int) -> FewShotSplit:
    """min(k, available) train samples per class, without replacement.

    Deterministic per (bundle, k, seed); the stream is keyed on the task
    name so distinct tasks draw independently under one seed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    by_class = {c: [] for c in range(bundle.n_classes)}
    for i in bundle.splits.get("train", []):
        by_class[bundle.labels[i]].append(i)
    root = Rng(seed).spawn(f"fewshot:{bundle.task_name}:{k}")
    chosen = {}
    for c in range(bundle.n_classes):
        pool = by_class[c]
        if not pool:
            raise DatasetError(
                f"task {bundle.task_name!r}: class {c} has no train samples")
        take = min(k, len(pool))
        picks = root.spawn(f"class{c}").sample_indices(len(pool), take)
        chosen[c] = sorted(pool[i] for i in picks)
    return FewShotSplit(k=k, seed=seed, per_class=chosen)


def split_base_new(bundle: TaskBundle, rule: str = "alpha-half"):
    """Partition classes into (base, new) bundles; first half of the
    name-sorted class list is base. Low-level samples follow their class."""
    if rule != "alpha-half":
        raise ValueError(f"unknown split rule {rule!r}")
    if bundle.n_classes < 2:
        raise DatasetError("need >= 2 classes to split")
    order = sorted(range(bundle.n_classes), key=lambda c: bundle.class_names[c])
    n_base = math.ceil(bundle.n_classes / 2)
    base_ids, new_ids = order[:n_base], order[n_base:]

    def subset(ids):
        remap = {old: new for new, old in enumerate(ids)}
        keep = [i for i in range(bundle.n_samples) if bundle.labels[i] in remap]
        pos = {old: new for new, old in enumerate(keep)}
        feats = T.cat_rows([T.rows_slice(bundle.features, i, i + 1) for i in keep])
        return TaskBundle(
            task_name=bundle.task_name,
            class_names=[bundle.class_names[c] for c in ids],
            features=feats,
            labels=[remap[bundle.labels[i]] for i in keep],
            splits={
                name: [pos[i] for i in idxs if i in pos]
                for name, idxs in bundle.splits.items()
            },
            task_tokens=bundle.task_tokens,
            class_tokens=(
                [bundle.class_tokens[c] for c in ids]
                if bundle.class_tokens is not None else None
            ),
        )

    return subset(base_ids), subset(new_ids)


# ---------------------------------------------------------------------------
# tensor blocks


def write_tensor_block(path: str, t: Tensor2, dtype: str = "f32"):
    code = _DTYPE_F32 if dtype == "f32" else _DTYPE_F64
    payload = array("f" if dtype == "f32" else "d", t.data)
    if sys.byteorder == "big":
        payload.byteswap()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHIIH", _MAGIC, _BLOCK_VERSION, t.rows, t.cols, code))
        fh.write(payload.tobytes())


def read_tensor_block(path: str) -> Tensor2:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise SuiteFormatError("truncated", f"cannot read {path}: {exc}") from exc
    if len(raw) < 16:
        raise SuiteFormatError("bad-magic", f"{path}: shorter than a header")
    magic, version, rows, cols, code = struct.unpack("<4sHIIH", raw[:16])
    if magic != _MAGIC:
        raise SuiteFormatError("bad-magic", f"{path}: magic {magic!r}")
    if version != _BLOCK_VERSION:
        raise SuiteFormatError("bad-version", f"{path}: block version {version}")
    if code not in (_DTYPE_F32, _DTYPE_F64):
        raise SuiteFormatError("bad-version", f"{path}: dtype code {code}")
    item = 4 if code == _DTYPE_F32 else 8
    if len(raw) - 16 != rows * cols * item:
        raise SuiteFormatError(
            "truncated",
            f"{path}: payload {len(raw) - 16} bytes, expected {rows * cols * item}")
    payload = array("f" if code == _DTYPE_F32 else "d")
    payload.frombytes(raw[16:])
    if sys.byteorder == "big":
        payload.byteswap()
    try:
        return Tensor2(rows, cols, array("d", payload))
    except ValueError as exc:
        raise SuiteFormatError("truncated", f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# suite read/write


def _labels_tensor(labels) -> Tensor2:
    return Tensor2.from_flat(len(labels), 1, [float(v) for v in labels])


def write_suite(suite: Suite, path: str, overwrite: bool = False):
    """Write the suite directory atomically (temp dir, then rename)."""
    suite.validate()
    if os.path.exists(path):
        if not overwrite:
            raise FileExistsError(path)
    tmp = f"{path}.tmp{os.getpid()}"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(os.path.join(tmp, "tensors"))
    tasks_meta = []
    for ti, b in enumerate(suite.bundles):
        rel_feat = f"tensors/task{ti}_features.bin"
        rel_lab = f"tensors/task{ti}_labels.bin"
        write_tensor_block(os.path.join(tmp, rel_feat), b.features, "f32")
        write_tensor_block(os.path.join(tmp, rel_lab), _labels_tensor(b.labels), "f32")
        meta = {
            "name": b.task_name,
            "class_names": list(b.class_names),
            "features": rel_feat,
            "labels": rel_lab,
            "splits": {k: list(v) for k, v in b.splits.items()},
            "task_tokens": None,
            "class_tokens": None,
        }
        if b.task_tokens is not None:
            rel = f"tensors/task{ti}_tasktok.bin"
            write_tensor_block(os.path.join(tmp, rel), b.task_tokens, "f32")
            meta["task_tokens"] = rel
        if b.class_tokens is not None:
            rels = []
            for ci, blk in enumerate(b.class_tokens):
                rel = f"tensors/task{ti}_class{ci}_tok.bin"
                write_tensor_block(os.path.join(tmp, rel), blk, "f32")
                rels.append(rel)
            meta["class_tokens"] = rels
        tasks_meta.append(meta)
    manifest = {
        "format": _SUITE_FORMAT,
        "version": _SUITE_VERSION,
        "d_txt": suite.d_txt,
        "d_embed": suite.d_embed,
        "temperature": suite.temperature,
        "features_l2_normalized": suite.features_l2_normalized,
        "token_embed_seed": suite.token_embed_seed,
        "tasks": tasks_meta,
    }
    with open(os.path.join(tmp, "suite.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(tmp, path)


def read_suite(path: str) -> Suite:
    manifest_path = os.path.join(path, "suite.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise SuiteFormatError("bad-manifest", f"cannot read {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SuiteFormatError("bad-manifest", f"{manifest_path}: {exc}") from exc
    if manifest.get("format") != _SUITE_FORMAT:
        raise SuiteFormatError("bad-version", f"format {manifest.get('format')!r}")
    if manifest.get("version") != _SUITE_VERSION:
        raise SuiteFormatError("bad-version", f"suite version {manifest.get('version')!r}")
    try:
        d_txt = int(manifest["d_txt"])
        tasks = manifest["tasks"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SuiteFormatError("bad-manifest", f"{manifest_path}: {exc}") from exc
    bundles = []
    for meta in tasks:
        feats = read_tensor_block(os.path.join(path, meta["features"]))
        lab_t = read_tensor_block(os.path.join(path, meta["labels"]))
        if lab_t.cols != 1 or lab_t.rows != feats.rows:
            raise SuiteFormatError(
                "width-mismatch",
                f"task {meta['name']!r}: labels {lab_t.shape} vs {feats.rows} samples")
        labels = []
        for v in lab_t.data:
            if v != int(v):
                raise DatasetError(f"non-integer label {v}")
            labels.append(int(v))
        task_tok = (read_tensor_block(os.path.join(path, meta["task_tokens"]))
                    if meta.get("task_tokens") else None)
        class_tok = ([read_tensor_block(os.path.join(path, rel))
                      for rel in meta["class_tokens"]]
                     if meta.get("class_tokens") else None)
        bundles.append(TaskBundle(
            task_name=meta["name"],
            class_names=list(meta["class_names"]),
            features=feats,
            labels=labels,
            splits={k: list(v) for k, v in meta.get("splits", {}).items()},
            task_tokens=task_tok,
            class_tokens=class_tok,
        ))
    suite = Suite(
        bundles=bundles,
        d_txt=d_txt,
        temperature=float(manifest.get("temperature", 0.01)),
        d_embed=int(manifest.get("d_embed", 0)),
        features_l2_normalized=bool(manifest.get("features_l2_normalized", False)),
        token_embed_seed=int(manifest.get("token_embed_seed", 0)),
    )
    suite.validate()
    return suite


# ---------------------------------------------------------------------------
# synthetic suites

_ADJECTIVES = (
    "amber basalt copper dusty emerald frosted golden hazel ivory jade "
    "khaki lilac maroon navy olive pearl quartz russet sable teal umber "
    "violet wheat zinc coral fern garnet heather indigo juniper"
).split()

_TASK_NOUNS = (
    "mineral fabric leaf cloud beetle pastry ribbon shell lantern tile "
    "feather marble crystal moss lichen braid"
).split()


@dataclass
class SyntheticSpec:
    """Gaussian class clusters on the unit feature sphere, one task per noun.

    In ``teacher`` mode the cluster means are encoder outputs of a hidden
    random context, so a prompt-tuned model can realize them exactly; in
    ``random`` mode the means are arbitrary unit vectors.
    """

    n_tasks: int = 3
    n_classes: int = 4
    train_per_class: int = 24
    val_per_class: int = 4
    test_per_class: int = 12
    spread: float = 0.06
    seed: int = 1
    temperature: float = 0.01
    mode: str = "teacher"  # or "random"
    teacher_context_len: int = 4
    teacher_std: float = 0.35
    token_embed_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("teacher", "random"):
            raise ValueError(f"mode must be teacher or random, got {self.mode!r}")
        if self.n_tasks < 1 or self.n_classes < 2:
            raise ValueError("need >= 1 task and >= 2 classes")
        if not (0.0 <= self.spread < 1.0):
            raise ValueError("spread must be in [0, 1)")


def _word(pool, i):
    if i < len(pool):
        return pool[i]
    return f"{pool[i % len(pool)]} {i // len(pool) + 1}"


def synthetic_class_means(spec: SyntheticSpec, enc: EncoderSpec):
    """Names and unit-norm cluster means for every (task, class)."""
    rng = Rng(spec.seed).spawn("synthetic")
    task_names, class_names, means = [], [], []
    teacher = None
    if spec.mode == "teacher":
        teacher = PromptContext(init_context(
            spec.teacher_context_len, enc.d_embed,
            rng.spawn("teacher"), std=spec.teacher_std))
    for t in range(spec.n_tasks):
        noun = _word(_TASK_NOUNS, t)
        task_names.append(f"{noun} classification")
        names_t, means_t = [], []
        for c in range(spec.n_classes):
            name = f"{_word(_ADJECTIVES, c)} {noun}"
            names_t.append(name)
            if spec.mode == "teacher":
                tokens = tokenize_and_embed(name, enc, spec.token_embed_seed)
                mu = T.l2_normalize(encode(build_class_prompt(teacher, tokens), enc))
            else:
                mu = T.l2_normalize(
                    rng.spawn(f"mean{t}.{c}").normal_tensor(1, enc.d_txt))
            means_t.append(mu)
        class_names.append(names_t)
        means.append(means_t)
    return task_names, class_names, means


def gen_synthetic(spec: SyntheticSpec, enc: EncoderSpec | None = None) -> Suite:
    enc = enc or EncoderSpec()
    task_names, class_names, means = synthetic_class_means(spec, enc)
    rng = Rng(spec.seed).spawn("synthetic-samples")
    per_class = spec.train_per_class + spec.val_per_class + spec.test_per_class
    bundles = []
    for t in range(spec.n_tasks):
        rows, labels = [], []
        # spread is the expected noise norm, so per-entry std shrinks with d_txt
        entry_std = spec.spread / math.sqrt(enc.d_txt)
        for c in range(spec.n_classes):
            crng = rng.spawn(f"task{t}.class{c}")
            for _ in range(per_class):
                noise = crng.normal_tensor(1, enc.d_txt, entry_std)
                rows.append(T.l2_normalize(T.add(means[t][c], noise)))
                labels.append(c)
        order = list(range(len(rows)))
        rng.spawn(f"task{t}.shuffle").shuffle(order)
        feats = T.cat_rows([rows[i] for i in order])
        labels = [labels[i] for i in order]
        by_class = {c: [] for c in range(spec.n_classes)}
        for i, y in enumerate(labels):
            by_class[y].append(i)
        splits = {"train": [], "val": [], "test": []}
        for c in range(spec.n_classes):
            idxs = by_class[c]
            splits["train"].extend(idxs[:spec.train_per_class])
            splits["val"].extend(idxs[spec.train_per_class:
                                      spec.train_per_class + spec.val_per_class])
            splits["test"].extend(idxs[spec.train_per_class + spec.val_per_class:])
        for key in splits:
            splits[key].sort()
        bundles.append(TaskBundle(
            task_name=task_names[t],
            class_names=class_names[t],
            features=feats,
            labels=labels,
            splits=splits,
        ))
    suite = Suite(
        bundles=bundles,
        d_txt=enc.d_txt,
        temperature=spec.temperature,
        d_embed=0,
        features_l2_normalized=True,
        token_embed_seed=spec.token_embed_seed,
    )
    suite.validate()
    return suite


# ---------------------------------------------------------------------------
# tokenized view used by training and evaluation


@dataclass
class TokenizedSuite:
    """A suite plus the token sequences of every task and class name."""

    suite: Suite
    enc: EncoderSpec
    task_tokens: list  # TokenSequence per task
    class_tokens: list  # list of TokenSequence per task


def tokenize_suite(suite: Suite, enc: EncoderSpec) -> TokenizedSuite:
    """Embed all names once. Pre-embedded blocks from the suite are used
    verbatim; everything else goes through the hashing tokenizer."""
    task_tokens, class_tokens = [], []
    for b in suite.bundles:
        if b.task_tokens is not None:
            task_tokens.append(TokenSequence(b.task_tokens))
        else:
            task_tokens.append(tokenize_and_embed(b.task_name, enc, suite.token_embed_seed))
        if b.class_tokens is not None:
            class_tokens.append([TokenSequence(blk) for blk in b.class_tokens])
        else:
            class_tokens.append([
                tokenize_and_embed(name, enc, suite.token_embed_seed)
                for name in b.class_names
            ])
    return TokenizedSuite(suite=suite, enc=enc,
                          task_tokens=task_tokens, class_tokens=class_tokens)
