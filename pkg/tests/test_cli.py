"""End-to-end tests of the command-line interface on micro configs."""

import json

import numpy as np
import pytest

from pushident.cli import main
from pushident.runio import read_metrics_csv

MICRO = {
    "stage0_episodes": 12,
    "episodes_per_meta": 12,
    "meta_iterations": 1,
    "val_episodes": 4,
    "test_episodes": 6,
    "predictor_steps": 30,
    "predictor_eval_interval": 15,
    "ppo_env_steps": 60,
    "steps_per_worker": 6,
    "workers": 2,
    "pushes": 3,
    "seed": 9,
}


@pytest.fixture
def micro_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(MICRO))
    return path


class TestSimulate:
    def test_fixed_seed_identical_files(self, tmp_path, capsys):
        paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for p in paths:
            assert main(["simulate", "--seed", "7", "--pushes", "2",
                         "--trajectory", str(p)]) == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()
        out = capsys.readouterr().out
        assert "settle_steps" in out

    def test_zero_pushes_single_observation(self, tmp_path):
        p = tmp_path / "t.jsonl"
        assert main(["simulate", "--seed", "1", "--pushes", "0",
                     "--trajectory", str(p)]) == 0
        record = json.loads(p.read_text())
        assert len(record["q_seq"]) == 1
        assert record["a_seq"] == []


class TestTrainEvaluate:
    def test_rp_then_evaluate(self, tmp_path, micro_config, capsys):
        out_root = tmp_path / "runs"
        assert main(["train", "--config", str(micro_config), "--stage", "rp",
                     "--workers", "1", "--out", str(out_root)]) == 0
        run_dirs = list(out_root.iterdir())
        assert len(run_dirs) == 1
        run_dir = run_dirs[0]
        assert (run_dir / "checkpoints" / "predictor-stage0.ckpt").exists()
        assert (run_dir / "manifest.jsonl").exists()
        report = tmp_path / "report"
        assert main(["evaluate", str(run_dir), "--test-seed-range", "0:5",
                     "--workers", "1", "--report", str(report)]) == 0
        text = (report.with_suffix(".txt")).read_text()
        assert "uniform-guess" in text
        rows = read_metrics_csv(report.with_suffix(".csv"))
        assert any(r["model"] == "uniform-guess" for r in rows)

    def test_alternate_writes_history_rows(self, tmp_path, micro_config):
        out_root = tmp_path / "runs"
        assert main(["train", "--config", str(micro_config), "--stage", "alternate",
                     "--workers", "1", "--out", str(out_root)]) == 0
        run_dir = next(out_root.iterdir())
        rows = read_metrics_csv(run_dir / "metrics" / "history.csv")
        assert len(rows) == MICRO["meta_iterations"] + 1

    def test_resume_same_final_metrics(self, tmp_path, micro_config):
        out_root = tmp_path / "runs"
        for _ in range(2):  # second call resumes completed stages
            assert main(["train", "--config", str(micro_config), "--stage", "rp",
                         "--workers", "1", "--out", str(out_root)]) == 0
        run_dir = next(out_root.iterdir())
        manifest_lines = (run_dir / "manifest.jsonl").read_text().splitlines()
        stages = [json.loads(l)["stage"] for l in manifest_lines
                  if json.loads(l).get("event") == "stage_complete"]
        assert len(stages) == len(set(stages)), "resume must not redo stages"

    def test_evaluate_rejects_mismatched_configs(self, tmp_path, micro_config):
        out_root = tmp_path / "runs"
        main(["train", "--config", str(micro_config), "--stage", "rp",
              "--workers", "1", "--out", str(out_root)])
        other_cfg = tmp_path / "other.json"
        other_cfg.write_text(json.dumps({**MICRO, "noise_std": 0.05}))
        main(["train", "--config", str(other_cfg), "--stage", "rp",
              "--workers", "1", "--out", str(out_root)])
        run_dirs = sorted(str(p) for p in out_root.iterdir())
        assert len(run_dirs) == 2
        assert main(["evaluate", *run_dirs, "--workers", "1",
                     "--report", str(tmp_path / "rep")]) == 1

    def test_seed_override_changes_run_id(self, tmp_path, micro_config):
        out_root = tmp_path / "runs"
        main(["train", "--config", str(micro_config), "--stage", "rp",
              "--workers", "1", "--out", str(out_root), "--seed", "33"])
        assert any("seed33" in p.name for p in out_root.iterdir())


class TestVerify:
    def test_identifiability_suite_exit_zero(self, capsys):
        assert main(["verify", "--suite", "identifiability"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out


class TestUsage:
    def test_unknown_command_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_config_file_is_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json"),
                     "--stage", "rp", "--out", str(tmp_path)]) == 1


def test_identifiability_table_command(tmp_path):
    table = tmp_path / "table.csv"
    assert main(["identifiability", "--seed", "2", "--configs", "2",
                 "--table", str(table)]) == 0
    rows = read_metrics_csv(table)
    assert len(rows) == 2 * 2 * 45
    assert all(0.0 <= float(r["score"]) <= 1.0 + 1e-12 for r in rows)
