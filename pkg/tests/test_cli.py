"""Tests for the command-line interface."""

import json

import pytest
from click.testing import CliRunner

from memagent.cli import main


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def suite_path(tmp_path):
    tasks = [
        {
            "id": "task-0",
            "instruction": "put cup on kitchen counter",
            "category": "pick_place",
            "goal_conditions": [
                {"kind": "at", "obj": "cup", "rel": "on", "place": "kitchen counter"}
            ],
            "initial_seed": 11,
        }
    ]
    path = tmp_path / "suite.json"
    path.write_text(json.dumps({"profile": "realworld", "tasks": tasks}))
    return str(path)


class TestRun:
    def test_run_prints_metrics_table(self, runner, suite_path):
        result = runner.invoke(
            main,
            ["run", "--suite", suite_path, "--passes", "1", "--failure-p", "0"],
        )
        assert result.exit_code == 0, result.output
        assert "suite.json" in result.output
        assert "1.000" in result.output

    def test_run_writes_report_and_sidecar(self, runner, suite_path, tmp_path):
        out = tmp_path / "report.json"
        result = runner.invoke(
            main,
            [
                "run", "--suite", suite_path, "--passes", "1",
                "--failure-p", "0", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["passes"][0]["metrics"]["sr"] == 1.0
        assert (tmp_path / "report.json.latency.json").exists()

    def test_run_writes_trajectory_log_and_snapshots(self, runner, suite_path, tmp_path):
        log = tmp_path / "traj.jsonl"
        snaps = tmp_path / "snaps"
        result = runner.invoke(
            main,
            [
                "run", "--suite", suite_path, "--passes", "1", "--failure-p", "0",
                "--log", str(log), "--snapshot-dir", str(snaps),
            ],
        )
        assert result.exit_code == 0, result.output
        assert log.read_text().strip()
        assert (snaps / "memory_pass1.json").exists()

    def test_parallel_tasks_requires_wipe(self, runner, suite_path):
        result = runner.invoke(
            main, ["run", "--suite", suite_path, "--parallel-tasks"]
        )
        assert result.exit_code != 0
        assert "--wipe-between-passes" in result.output

    def test_disable_rejects_unknown_capability(self, runner, suite_path):
        result = runner.invoke(
            main, ["run", "--suite", suite_path, "--disable", "gravity"]
        )
        assert result.exit_code != 0

    def test_two_pass_run_reports_delta(self, runner, suite_path):
        result = runner.invoke(
            main,
            ["run", "--suite", suite_path, "--passes", "2", "--failure-p", "0"],
        )
        assert result.exit_code == 0, result.output
        assert "pass-to-pass sr delta" in result.output


class TestAblate:
    def test_ablate_lists_all_variants(self, runner, suite_path, tmp_path):
        out = tmp_path / "ablation.json"
        result = runner.invoke(
            main,
            [
                "ablate", "--suite", suite_path, "--passes", "1",
                "--failure-p", "0", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text())
        assert set(doc) == {"full", "critic", "spatial", "longterm"}
        for variant in result.output.splitlines()[1:]:
            assert variant.split()[0] in doc


class TestBench:
    def test_bench_reports_speedup(self, runner):
        result = runner.invoke(main, ["bench", "--delay-ms", "20", "--rounds", "1"])
        assert result.exit_code == 0, result.output
        assert "parallel" in result.output
        assert "speedup" in result.output


class TestReplay:
    def test_replay_renders_executed_and_rejected_entries(self, runner, tmp_path):
        log = tmp_path / "traj.jsonl"
        entries = [
            {
                "task_id": "t1", "step": 1, "action": "navigate_to(sink)",
                "outcome": "success", "verdict": None, "executed": True,
            },
            {
                "task_id": "t1", "action": "pick_up(cup)",
                "verdict": "reject", "verdict_reason": "redundant", "executed": False,
            },
        ]
        log.write_text("\n".join(json.dumps(e) for e in entries) + "\n")
        result = runner.invoke(main, ["replay", str(log)])
        assert result.exit_code == 0, result.output
        assert "navigate_to(sink) -> success" in result.output
        assert "rejected: pick_up(cup) (redundant)" in result.output

    def test_replay_rejects_bad_json(self, runner, tmp_path):
        log = tmp_path / "bad.jsonl"
        log.write_text("not json\n")
        result = runner.invoke(main, ["replay", str(log)])
        assert result.exit_code != 0

    def test_replay_missing_file(self, runner, tmp_path):
        result = runner.invoke(main, ["replay", str(tmp_path / "nope.jsonl")])
        assert result.exit_code != 0


class TestSnapshot:
    def test_snapshot_summary(self, runner, suite_path, tmp_path):
        snaps = tmp_path / "snaps"
        runner.invoke(
            main,
            [
                "run", "--suite", suite_path, "--passes", "1", "--failure-p", "0",
                "--snapshot-dir", str(snaps),
            ],
        )
        result = runner.invoke(main, ["snapshot", str(snaps / "memory_pass1.json")])
        assert result.exit_code == 0, result.output
        assert "spatial:" in result.output
        assert "temporal:" in result.output
        assert "long-term:" in result.output
