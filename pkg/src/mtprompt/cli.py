"""Operator entry point.

Subcommands: gen-synthetic, import, train, eval, transfer, analyze,
check-prop, gradcheck. Every run writes its artifacts plus a manifest
(resolved configuration, seeds, code version, kernel backend) into the
output directory; rerunning a command with the same manifest reproduces
byte-identical numerical outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
A one-line reason goes to stderr.

Options can come from a flat ``key = value`` config file (``--config``);
explicit flags win over the file, the file wins over built-in defaults,
and the defaults are the standard protocol (lr 0.002, batch 32, 50
epochs, L 16, M 8, seeds 1,2,3).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import __version__
from ._kernels import BACKEND
from .data import (Suite, SyntheticSpec, gen_synthetic, read_suite,
                   sample_few_shot, split_base_new, tokenize_suite,
                   write_suite, write_tensor_block)
from .encoder import EncoderSpec
from .errors import DatasetError, SuiteFormatError, TrainingDiverged
from .evals import (ScoreTable, SHOT_LEVELS, evaluate_task, finite_diff_check,
                    harmonic_mean, one_step_update_check, rsd,
                    similarity_report, transfer_eval, transfer_matrix)
from .model import METHODS, ModelState, load_state, save_state
from .optim import TrainConfig, train

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 1, 2, 3

_DEFAULTS = {
    "lr0": 0.002,
    "epochs": 50,
    "batch_size": 32,
    "L": 16,
    "M": 8,
    "K": None,
    "body": "linear",
    "reduction": 1,
    "class_sampling_fraction": 1.0,
    "batch_mode": "mixed",
    "seed": 1,
    "seeds": "1,2,3",
    "shots": "1,2,4,8,16",
    "metric": "top1",
    "d_embed": 32,
    "d_txt": 64,
    "depth": 2,
    "heads": 2,
    "pooling": "mean",
    "weight_seed": 0,
}


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def load_config(path: str) -> dict:
    """Flat UTF-8 key = value file; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _Usage(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _resolve(args, key, cast=str):
    """flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    cfg = getattr(args, "_config_dict", {})
    if key in cfg:
        raw = cfg[key]
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return _DEFAULTS.get(key)


def _int_list(text: str):
    return [int(s) for s in str(text).split(",") if s.strip()]


def _parse_seeds(value) -> list:
    """A comma list is literal; a single integer n means seeds 1..n."""
    items = _int_list(value)
    if len(items) == 1 and "," not in str(value):
        return list(range(1, items[0] + 1))
    return items


def _encoder_from(args) -> EncoderSpec:
    return EncoderSpec(
        d_embed=int(_resolve(args, "d_embed", int)),
        d_txt=int(_resolve(args, "d_txt", int)),
        depth=int(_resolve(args, "depth", int)),
        heads=int(_resolve(args, "heads", int)),
        pooling=str(_resolve(args, "pooling")),
        weight_seed=int(_resolve(args, "weight_seed", int)),
    )


def _train_config(args, method=None, seed=None) -> TrainConfig:
    k_raw = _resolve(args, "K", int)
    return TrainConfig(
        method=method or args.method,
        lr0=float(_resolve(args, "lr0", float)),
        epochs=int(_resolve(args, "epochs", int)),
        batch_size=int(_resolve(args, "batch_size", int)),
        seed=int(seed if seed is not None else _resolve(args, "seed", int)),
        L=int(_resolve(args, "L", int)),
        M=int(_resolve(args, "M", int)),
        K=(int(k_raw) if k_raw is not None else None),
        body=str(_resolve(args, "body")),
        reduction=int(_resolve(args, "reduction", int)),
        class_sampling_fraction=float(_resolve(args, "class_sampling_fraction", float)),
        batch_mode=str(_resolve(args, "batch_mode")),
    )


def _write_manifest(outdir: str, command: str, resolved: dict):
    os.makedirs(outdir, exist_ok=True)
    manifest = {
        "command": command,
        "config": resolved,
        "version": __version__,
        "kernel_backend": BACKEND,
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _few_shot_indices(suite: Suite, k: int | None, seed: int):
    if k is None:
        return None
    return {
        t: sample_few_shot(b, k, seed).indices
        for t, b in enumerate(suite.bundles)
    }


def _write_lines(path: str, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _write_json(path: str, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_synthetic(args):
    enc = _encoder_from(args)
    spec = SyntheticSpec(
        n_tasks=args.tasks, n_classes=args.classes,
        train_per_class=args.train_per_class,
        val_per_class=args.val_per_class,
        test_per_class=args.test_per_class,
        spread=args.spread, seed=int(_resolve(args, "seed", int)),
        temperature=args.temperature, mode=args.cluster_mode,
    )
    suite = gen_synthetic(spec, enc)
    write_suite(suite, os.path.join(args.out, "suite"), overwrite=args.force)
    _write_manifest(args.out, "gen-synthetic",
                    {"spec": vars(spec), "encoder": enc.to_json_dict(),
                     "out": args.out})
    print(f"wrote {suite.n_tasks}-task suite to {os.path.join(args.out, 'suite')}")
    return 0


def _cmd_import(args):
    suite = read_suite(args.suite)
    out_suite = os.path.join(args.out, "suite")
    write_suite(suite, out_suite, overwrite=args.force)
    _write_manifest(args.out, "import", {"suite": args.suite, "out": args.out})
    print(f"validated {suite.n_tasks} tasks, {suite.n_classes_total} classes; "
          f"rewrote to {out_suite}")
    return 0


def _cmd_train(args):
    suite = read_suite(args.suite)
    enc = _encoder_from(args)
    ts = tokenize_suite(suite, enc)
    config = _train_config(args)
    indices = _few_shot_indices(suite, args.shots_k, config.seed)
    result = train(config, ts, train_indices=indices)
    ckpt = os.path.join(args.out, "checkpoint")
    save_state(result.state, ckpt, enc=enc, overwrite=args.force,
               extra_meta={"suite": args.suite, "final_loss": result.final_loss})
    _write_lines(os.path.join(args.out, "train.log"), result.log)
    _write_manifest(args.out, "train", {
        "suite": args.suite, "method": config.method, "seed": config.seed,
        "shots": args.shots_k, "train": vars(config),
        "encoder": enc.to_json_dict(), "out": args.out,
    })
    print(f"trained {config.method} (final loss {result.final_loss:.6g}); "
          f"checkpoint at {ckpt}")
    return 0


def _eval_state_on(ts, state, metric):
    return [evaluate_task(state, ts, t, split="test", metric=metric)
            for t in range(ts.suite.n_tasks)]


def _cmd_eval(args):
    suite = read_suite(args.suite)
    enc = _encoder_from(args)
    metric = str(_resolve(args, "metric"))
    shots = _int_list(_resolve(args, "shots"))
    seeds = _parse_seeds(_resolve(args, "seeds"))
    if args.base_new:
        return _eval_base_new(args, suite, enc, metric, shots, seeds)
    ts = tokenize_suite(suite, enc)
    os.makedirs(args.out, exist_ok=True)
    table = ScoreTable()
    for seed in seeds:
        for k in shots:
            config = _train_config(args, seed=seed)
            indices = _few_shot_indices(suite, k, seed)
            result = train(config, ts, train_indices=indices)
            for t, score in enumerate(_eval_state_on(ts, result.state, metric)):
                table.add(t, k, seed, score)
    lines = ["task\tshot\tseed\tscore"]
    for t, k, seed, score in table.entries:
        lines.append(f"{t}\t{k}\t{seed}\t{score:.6f}")
    _write_lines(os.path.join(args.out, "scores.tsv"), lines)
    summary = {
        "method": args.method,
        "metric": metric,
        "per_task": {
            str(t): {str(k): dict(zip(("mean", "std"), table.task_mean_std(t, k)))
                     for k in table.shots()}
            for t in table.tasks()
        },
        "per_shot": {str(k): dict(zip(("score", "std"), table.shot_stats(k)))
                     for k in table.shots()},
    }
    if all(k in table.shots() for k in SHOT_LEVELS):
        summary["rsd"] = rsd(table)
    _write_json(os.path.join(args.out, "summary.json"), summary)
    _write_manifest(args.out, "eval", {
        "suite": args.suite, "method": args.method, "shots": shots,
        "seeds": seeds, "metric": metric, "train": vars(_train_config(args)),
        "encoder": enc.to_json_dict(), "out": args.out,
    })
    print(f"eval: {len(table.entries)} entries "
          f"({len(table.tasks())} tasks x {len(shots)} shots x {len(seeds)} seeds)")
    return 0


def _eval_base_new(args, suite, enc, metric, shots, seeds):
    pairs = [split_base_new(b) for b in suite.bundles]
    base_suite = Suite(
        bundles=[p[0] for p in pairs], d_txt=suite.d_txt,
        temperature=suite.temperature, d_embed=suite.d_embed,
        features_l2_normalized=suite.features_l2_normalized,
        token_embed_seed=suite.token_embed_seed)
    new_suite = Suite(
        bundles=[p[1] for p in pairs], d_txt=suite.d_txt,
        temperature=suite.temperature, d_embed=suite.d_embed,
        features_l2_normalized=suite.features_l2_normalized,
        token_embed_seed=suite.token_embed_seed)
    ts_base = tokenize_suite(base_suite, enc)
    ts_new = tokenize_suite(new_suite, enc)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for seed in seeds:
        for k in shots:
            config = _train_config(args, seed=seed)
            indices = _few_shot_indices(base_suite, k, seed)
            result = train(config, ts_base, train_indices=indices)
            base_scores = _eval_state_on(ts_base, result.state, metric)
            # the trained contexts are evaluated on the held-out classes:
            # rebuild weights from the new-class names with the same state
            new_scores = _scores_on_new(result.state, ts_new, metric)
            for t in range(suite.n_tasks):
                h = harmonic_mean(base_scores[t], new_scores[t])
                rows.append((t, k, seed, base_scores[t], new_scores[t], h))
    lines = ["task\tshot\tseed\tbase\tnew\tharmonic"]
    for row in rows:
        lines.append("\t".join(str(v) if i < 3 else f"{v:.6f}"
                               for i, v in enumerate(row)))
    _write_lines(os.path.join(args.out, "base_new.tsv"), lines)
    mean_base = sum(r[3] for r in rows) / len(rows)
    mean_new = sum(r[4] for r in rows) / len(rows)
    _write_json(os.path.join(args.out, "base_new_summary.json"), {
        "base": mean_base, "new": mean_new,
        "harmonic": harmonic_mean(mean_base, mean_new),
    })
    _write_manifest(args.out, "eval", {
        "suite": args.suite, "method": args.method, "base_new": True,
        "shots": shots, "seeds": seeds, "metric": metric, "out": args.out,
    })
    print(f"base-to-new: base {mean_base:.2f}, new {mean_new:.2f}, "
          f"H {harmonic_mean(mean_base, mean_new):.2f}")
    return 0


def _scores_on_new(state, ts_new, metric):
    """Evaluate trained contexts on a suite with held-out class names."""
    eval_state = ModelState(
        method=state.method, n_tasks=ts_new.suite.n_tasks,
        classes_per_task=[b.n_classes for b in ts_new.suite.bundles],
        d_embed=state.d_embed, d_txt=state.d_txt,
        temperature=state.temperature, L=state.L, M=state.M, K=state.K,
        body=state.body, reduction=state.reduction, seed=state.seed)
    carry = {"ctx", "taskctx", "metanet"}
    for name, value in state.named_parameters().items():
        if name.split(".")[0] in carry and name in eval_state.named_parameters():
            eval_state.set_parameter(name, value)
    if state.net is not None and state.net.body == "mlp":
        eval_state.net.bn_mean = state.net.bn_mean
        eval_state.net.bn_var = state.net.bn_var
    return _eval_state_on(ts_new, eval_state, metric)


def _train_single_task_contexts(args, ts, seed):
    config = _train_config(args, method="coop-ca", seed=seed)
    indices = _few_shot_indices(ts.suite, args.shots_k, seed)
    result = train(config, ts, train_indices=indices)
    return [result.state.ctxs[t] for t in range(ts.suite.n_tasks)], config


def _cmd_transfer(args):
    suite = read_suite(args.suite)
    enc = _encoder_from(args)
    ts = tokenize_suite(suite, enc)
    seed = int(_resolve(args, "seed", int))
    metric = str(_resolve(args, "metric"))
    contexts, config = _train_single_task_contexts(args, ts, seed)
    os.makedirs(args.out, exist_ok=True)
    reports = {}
    matrix = None
    for mode in args.modes.split(","):
        rep = transfer_eval(contexts, ts, mode.strip(), metric=metric)
        reports[rep.mode] = rep.per_task
        if rep.matrix is not None:
            matrix = rep.matrix
    if matrix is not None:
        write_tensor_block(os.path.join(args.out, "transfer_S.bin"), matrix, "f64")
    self_scores = ([matrix.at(j, j) for j in range(matrix.rows)]
                   if matrix is not None else None)
    _write_json(os.path.join(args.out, "transfer.json"), {
        "modes": reports, "self_scores": self_scores, "seed": seed,
    })
    _write_manifest(args.out, "transfer", {
        "suite": args.suite, "seed": seed, "modes": args.modes,
        "shots": args.shots_k, "metric": metric, "train": vars(config),
        "encoder": enc.to_json_dict(), "out": args.out,
    })
    for mode, scores in reports.items():
        mean = sum(scores) / len(scores)
        print(f"{mode}: mean {mean:.2f} " +
              " ".join(f"{s:.2f}" for s in scores))
    return 0


def _cmd_analyze(args):
    suite = read_suite(args.suite)
    enc = _encoder_from(args)
    ts = tokenize_suite(suite, enc)
    seed = int(_resolve(args, "seed", int))
    metric = str(_resolve(args, "metric"))
    contexts, _ = _train_single_task_contexts(args, ts, seed)
    s = transfer_matrix(contexts, ts, metric=metric)
    mt_config = _train_config(args, method=args.mt_method, seed=seed)
    indices = _few_shot_indices(suite, args.shots_k, seed)
    mt_result = train(mt_config, ts, train_indices=indices)
    rep = similarity_report(contexts, mt_result.state, s, ts)
    os.makedirs(args.out, exist_ok=True)
    for name, mat in (("S", rep.s), ("S_norm", rep.s_norm),
                      ("S_oracle", rep.s_oracle), ("S_st", rep.s_st),
                      ("S_mt", rep.s_mt)):
        write_tensor_block(os.path.join(args.out, f"{name}.bin"), mat, "f64")
    _write_json(os.path.join(args.out, "correlations.json"), {
        "corr_single_task": rep.corr_st,
        "corr_multi_task": rep.corr_mt,
        "degenerate_single_task": rep.corr_st is None,
        "degenerate_multi_task": rep.corr_mt is None,
    })
    _write_manifest(args.out, "analyze", {
        "suite": args.suite, "seed": seed, "mt_method": args.mt_method,
        "shots": args.shots_k, "metric": metric,
        "encoder": enc.to_json_dict(), "out": args.out,
    })
    fmt = lambda v: "degenerate" if v is None else f"{v:.4f}"
    print(f"correlation(S_oracle, S_st) = {fmt(rep.corr_st)}; "
          f"correlation(S_oracle, S_mt) = {fmt(rep.corr_mt)}")
    return 0


def _toy_suite_for_checks(args, temperature):
    enc = _encoder_from(args)
    spec = SyntheticSpec(
        n_tasks=3, n_classes=4, train_per_class=4, val_per_class=0,
        test_per_class=2, seed=int(_resolve(args, "seed", int)),
        temperature=temperature)
    return gen_synthetic(spec, enc), enc


def _cmd_check_prop(args):
    if args.suite:
        suite = read_suite(args.suite)
        enc = _encoder_from(args)
    else:
        suite, enc = _toy_suite_for_checks(args, temperature=0.01)
    ts = tokenize_suite(suite, enc)
    seed = int(_resolve(args, "seed", int))
    if args.ckpt:
        state, _ = load_state(args.ckpt)
    else:
        method = "softcpt-nata" if args.mode == "exact" else "softcpt-nats"
        state = ModelState(
            method, suite.n_tasks, [b.n_classes for b in suite.bundles],
            enc.d_embed, suite.d_txt, suite.temperature,
            L=int(_resolve(args, "L", int)), M=int(_resolve(args, "M", int)),
            seed=seed)
    etas = [float(s) for s in args.etas.split(",")]
    results, ok = [], True
    if args.mode == "exact":
        for eta in etas:
            rep = one_step_update_check(state, ts, eta, mode="exact")
            passed = rep.max_residual <= args.threshold
            ok = ok and passed
            results.append({"eta": eta, "max_residual": rep.max_residual,
                            "pass": passed})
            print(f"exact eta={eta:g}: residual {rep.max_residual:.3e} "
                  f"{'PASS' if passed else 'FAIL'}")
    else:
        for eta in etas:
            r1 = one_step_update_check(state, ts, eta, mode="general").max_residual
            r2 = one_step_update_check(state, ts, eta / 2, mode="general").max_residual
            ratio = r1 / r2 if r2 > 0 else math.inf
            passed = ratio >= args.ratio
            ok = ok and passed
            results.append({"eta": eta, "residual": r1, "residual_half": r2,
                            "ratio": ratio, "pass": passed})
            print(f"general eta={eta:g}: residual {r1:.3e}, "
                  f"ratio vs eta/2 {ratio:.2f} {'PASS' if passed else 'FAIL'}")
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "check_prop.json"), {
        "mode": args.mode, "results": results, "pass": ok,
    })
    _write_manifest(args.out, "check-prop", {
        "mode": args.mode, "etas": etas, "seed": seed, "suite": args.suite,
        "ckpt": args.ckpt, "threshold": args.threshold, "ratio": args.ratio,
        "encoder": enc.to_json_dict(), "out": args.out,
    })
    if not ok:
        raise TrainingDiverged("one-step decomposition check failed")
    return 0


def _cmd_gradcheck(args):
    enc = EncoderSpec(d_embed=16, d_txt=24, depth=1, heads=2,
                      weight_seed=int(_resolve(args, "weight_seed", int)))
    # temperature 0.25: finite differences need mild logit scaling, the
    # analytic gradients themselves do not depend on it
    spec = SyntheticSpec(n_tasks=2, n_classes=3, train_per_class=3,
                         val_per_class=0, test_per_class=2,
                         seed=int(_resolve(args, "seed", int)),
                         temperature=0.25)
    suite = gen_synthetic(spec, enc)
    ts = tokenize_suite(suite, enc)
    batch = [(t, i) for t in range(suite.n_tasks)
             for i in suite.bundles[t].splits["train"]]
    methods = (args.methods.split(",") if args.methods else list(METHODS))
    rows, ok = [], True
    for method in methods:
        bodies = ("linear", "mlp") if method.startswith("softcpt") else ("linear",)
        for body in bodies:
            k = 2 if method.startswith(("softcpt-ca", "softcpt-cs")) else None
            state = ModelState(
                method, suite.n_tasks, [b.n_classes for b in suite.bundles],
                enc.d_embed, enc.d_txt, suite.temperature,
                L=4, M=2, K=k, body=body, reduction=2, seed=11)
            rep = finite_diff_check(state, ts, batch)
            worst = max(e for e, _ in rep.values())
            passed = worst < args.threshold
            ok = ok and passed
            rows.append({"method": method, "body": body, "worst": worst,
                         "tensors": len(rep), "pass": passed})
            print(f"{method:14s} {body:6s}: worst rel err {worst:.3e} "
                  f"{'PASS' if passed else 'FAIL'}")
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "gradcheck.json"),
                {"results": rows, "pass": ok, "threshold": args.threshold})
    _write_manifest(args.out, "gradcheck", {
        "methods": methods, "threshold": args.threshold,
        "seed": int(_resolve(args, "seed", int)), "out": args.out,
    })
    if not ok:
        raise TrainingDiverged("gradient check failed")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p, need_out: bool = True):
    p.add_argument("--config", help="flat key = value config file")
    if need_out:
        p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true",
                   help="overwrite existing artifacts")
    p.add_argument("--seed", type=int)
    for flag in ("--d-embed", "--d-txt", "--depth", "--heads", "--weight-seed"):
        p.add_argument(flag, type=int, dest=flag[2:].replace("-", "_"))
    p.add_argument("--pooling", choices=("mean", "last"))


def _add_train_opts(p):
    p.add_argument("--lr0", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--L", type=int, dest="L")
    p.add_argument("--M", type=int, dest="M")
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--body", choices=("linear", "mlp"))
    p.add_argument("--reduction", type=int)
    p.add_argument("--class-sampling-fraction", type=float,
                   dest="class_sampling_fraction")
    p.add_argument("--batch-mode", choices=("mixed", "round-robin"),
                   dest="batch_mode")
    p.add_argument("--shots-k", type=int, dest="shots_k",
                   help="few-shot k for the train split (default: full split)")


def build_parser() -> _Parser:
    parser = _Parser(prog="mtprompt", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic suite")
    _add_common(p)
    p.add_argument("--tasks", type=int, default=3)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--train-per-class", type=int, default=24, dest="train_per_class")
    p.add_argument("--val-per-class", type=int, default=4, dest="val_per_class")
    p.add_argument("--test-per-class", type=int, default=12, dest="test_per_class")
    p.add_argument("--spread", type=float, default=0.06)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--cluster-mode", choices=("teacher", "random"),
                   default="teacher", dest="cluster_mode")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("import", help="validate a suite and rewrite it")
    _add_common(p)
    p.add_argument("--suite", required=True)
    p.set_defaults(func=_cmd_import)

    p = sub.add_parser("train", help="train one method on a suite")
    _add_common(p)
    p.add_argument("--suite", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    _add_train_opts(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="train/evaluate over shots and seeds")
    _add_common(p)
    p.add_argument("--suite", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--shots", help="comma list of shot counts")
    p.add_argument("--seeds", help="comma list of seeds, or a count n -> 1..n")
    p.add_argument("--metric", choices=("top1", "per-class"))
    p.add_argument("--base-new", action="store_true", dest="base_new",
                   help="train on the base half of each task's classes, "
                        "report base/new/harmonic-mean scores")
    _add_train_opts(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("transfer", help="cross-task reuse of single-task contexts")
    _add_common(p)
    p.add_argument("--suite", required=True)
    p.add_argument("--modes", default="oracle,ensfeat,enspred")
    p.add_argument("--metric", choices=("top1", "per-class"))
    _add_train_opts(p)
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("analyze", help="task-similarity matrices and correlations")
    _add_common(p)
    p.add_argument("--suite", required=True)
    p.add_argument("--mt-method", default="softcpt-nata", dest="mt_method",
                   choices=("softcpt-nata", "softcpt-nats"))
    p.add_argument("--metric", choices=("top1", "per-class"))
    _add_train_opts(p)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("check-prop",
                       help="verify the one-step SGD update decomposition")
    _add_common(p)
    p.add_argument("--mode", choices=("exact", "general"), default="exact")
    p.add_argument("--suite", help="suite to check on (default: builtin toy)")
    p.add_argument("--ckpt", help="checkpoint to check (default: fresh init)")
    p.add_argument("--etas", default="1e-1,1e-2,1e-3")
    p.add_argument("--threshold", type=float, default=1e-10,
                   help="exact-mode residual bound")
    p.add_argument("--ratio", type=float, default=3.0,
                   help="general-mode residual(eta)/residual(eta/2) bound")
    p.add_argument("--L", type=int, dest="L")
    p.add_argument("--M", type=int, dest="M")
    p.set_defaults(func=_cmd_check_prop)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every learnable tensor")
    _add_common(p)
    p.add_argument("--methods", help="comma list (default: all methods)")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            args._config_dict = load_config(args.config)
        else:
            args._config_dict = {}
        return args.func(args)
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (TrainingDiverged, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (SuiteFormatError, DatasetError, FileNotFoundError,
            FileExistsError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
