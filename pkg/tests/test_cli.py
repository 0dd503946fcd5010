"""Subcommand flows, exit codes, and manifest reproducibility."""

import filecmp
import json
import os

import pytest

from mtprompt.cli import main
from mtprompt.model import ModelState, load_state


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = str(root / "gen")
    code = main(["gen-synthetic", "--out", out, "--tasks", "2", "--classes", "3",
                 "--train-per-class", "6", "--val-per-class", "0",
                 "--test-per-class", "4", "--seed", "1"])
    assert code == 0
    return os.path.join(out, "suite")


def _tensor_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            if name.endswith(".bin"):
                p = os.path.join(dirpath, name)
                out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


class TestFlows:
    def test_import_validates_and_rewrites(self, suite_dir, tmp_path):
        out = str(tmp_path / "imp")
        assert main(["import", "--suite", suite_dir, "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "suite", "suite.json"))
        assert os.path.exists(os.path.join(out, "manifest.json"))

    def test_train_writes_artifacts(self, suite_dir, tmp_path):
        out = str(tmp_path / "tr")
        code = main(["train", "--suite", suite_dir, "--method", "softcpt-nata",
                     "--out", out, "--epochs", "2", "--L", "4", "--M", "2",
                     "--seed", "1"])
        assert code == 0
        assert os.path.exists(os.path.join(out, "checkpoint", "checkpoint.json"))
        log = open(os.path.join(out, "train.log")).read().strip().splitlines()
        assert log and all(len(line.split("\t")) >= 4 for line in log)
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["command"] == "train"
        assert manifest["config"]["train"]["lr0"] == 0.002

    def test_rerun_is_byte_identical(self, suite_dir, tmp_path):
        args = ["train", "--suite", suite_dir, "--method", "coop-mt",
                "--epochs", "2", "--L", "4", "--seed", "2"]
        out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
        assert main(args + ["--out", out1]) == 0
        assert main(args + ["--out", out2]) == 0
        b1 = _tensor_bytes(os.path.join(out1, "checkpoint"))
        b2 = _tensor_bytes(os.path.join(out2, "checkpoint"))
        assert b1 == b2
        assert filecmp.cmp(os.path.join(out1, "train.log"),
                           os.path.join(out2, "train.log"), shallow=False)

    def test_zero_lr_checkpoint_equals_init(self, suite_dir, tmp_path):
        out = str(tmp_path / "z")
        assert main(["train", "--suite", suite_dir, "--method", "coop-mt",
                     "--out", out, "--epochs", "2", "--L", "4", "--lr0", "0",
                     "--seed", "3"]) == 0
        state, manifest = load_state(os.path.join(out, "checkpoint"))
        fresh = ModelState("coop-mt", state.n_tasks, state.classes_per_task,
                           state.d_embed, state.d_txt, state.temperature,
                           L=4, seed=3)
        assert state.named_parameters()["ctx"] == fresh.named_parameters()["ctx"]

    def test_eval_emits_full_score_table(self, suite_dir, tmp_path):
        out = str(tmp_path / "ev")
        assert main(["eval", "--suite", suite_dir, "--method", "coop-mt",
                     "--out", out, "--epochs", "1", "--L", "4",
                     "--shots", "1,2", "--seeds", "2"]) == 0
        rows = open(os.path.join(out, "scores.tsv")).read().strip().splitlines()
        # header + tasks x shots x seeds
        assert len(rows) - 1 == 2 * 2 * 2
        summary = json.load(open(os.path.join(out, "summary.json")))
        assert "rsd" not in summary  # needs all five shot levels

    def test_transfer_artifacts(self, suite_dir, tmp_path):
        out = str(tmp_path / "tx")
        assert main(["transfer", "--suite", suite_dir, "--out", out,
                     "--epochs", "1", "--L", "4", "--shots-k", "2",
                     "--seed", "1"]) == 0
        report = json.load(open(os.path.join(out, "transfer.json")))
        assert set(report["modes"]) == {"oracle", "ensfeat", "enspred"}
        assert os.path.exists(os.path.join(out, "transfer_S.bin"))
        for j, oracle_score in enumerate(report["modes"]["oracle"]):
            assert oracle_score >= report["self_scores"][j]

    def test_analyze_artifacts(self, suite_dir, tmp_path):
        out = str(tmp_path / "an")
        assert main(["analyze", "--suite", suite_dir, "--out", out,
                     "--epochs", "1", "--L", "4", "--M", "2",
                     "--shots-k", "2", "--seed", "1"]) == 0
        for name in ("S", "S_norm", "S_oracle", "S_st", "S_mt"):
            assert os.path.exists(os.path.join(out, f"{name}.bin"))
        corr = json.load(open(os.path.join(out, "correlations.json")))
        assert "corr_single_task" in corr and "corr_multi_task" in corr

    def test_check_prop_passes_on_fresh_toy(self, tmp_path):
        out = str(tmp_path / "cp")
        assert main(["check-prop", "--mode", "exact", "--out", out]) == 0
        rep = json.load(open(os.path.join(out, "check_prop.json")))
        assert rep["pass"] and all(r["max_residual"] < 1e-10
                                   for r in rep["results"])

    def test_gradcheck_passes(self, tmp_path):
        out = str(tmp_path / "gc")
        assert main(["gradcheck", "--methods", "coop-mt,softcpt-nats",
                     "--out", out]) == 0
        rep = json.load(open(os.path.join(out, "gradcheck.json")))
        assert rep["pass"]

    def test_config_file_resolution(self, suite_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 1\nL = 4\nseed = 5  # trailing comment\n")
        out = str(tmp_path / "cfgrun")
        assert main(["train", "--suite", suite_dir, "--method", "coop-mt",
                     "--out", out, "--config", str(cfg)]) == 0
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["config"]["train"]["epochs"] == 1
        assert manifest["config"]["seed"] == 5
        # explicit flag beats the file
        out2 = str(tmp_path / "cfgrun2")
        assert main(["train", "--suite", suite_dir, "--method", "coop-mt",
                     "--out", out2, "--config", str(cfg), "--epochs", "2"]) == 0
        manifest2 = json.load(open(os.path.join(out2, "manifest.json")))
        assert manifest2["config"]["train"]["epochs"] == 2


class TestExitCodes:
    def test_usage_error(self):
        assert main(["not-a-command"]) == 1
        assert main(["train", "--suite", "x"]) == 1  # missing required flags

    def test_data_error(self, tmp_path):
        assert main(["train", "--suite", str(tmp_path / "missing"),
                     "--method", "coop-mt", "--out", str(tmp_path / "o")]) == 2

    def test_numerical_failure(self, tmp_path):
        # an impossible residual bound forces the check to fail
        out = str(tmp_path / "cpfail")
        assert main(["check-prop", "--mode", "exact", "--out", out,
                     "--threshold", "0"]) == 3

    def test_corrupt_suite_is_data_error(self, suite_dir, tmp_path):
        import shutil
        broken = str(tmp_path / "broken")
        shutil.copytree(suite_dir, broken)
        blocks = os.listdir(os.path.join(broken, "tensors"))
        victim = os.path.join(broken, "tensors", sorted(blocks)[0])
        raw = bytearray(open(victim, "rb").read())
        raw[0] ^= 0xFF
        open(victim, "wb").write(bytes(raw))
        assert main(["train", "--suite", broken, "--method", "coop-mt",
                     "--out", str(tmp_path / "o2")]) == 2
