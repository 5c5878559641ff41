"""Tests for suite aggregation, report files and the runner."""
import csv

import pytest

from src.core.models import Evaluation, ModeDecision, TaskGroup, ThinkingMode, TrialRecord, WorldConfig
from src.core.oracle import OracleBackend
from src.core.reasoner import FaultBackend
from src.core.suite import (
    SUMMARY_COLUMNS, BenchmarkRunner, load_trials, summarize, summarize_task, write_summary_csv,
    write_trials
)
from src.core.tasks import catalog_by_id


def make_record(task_id="SM-1", group=TaskGroup.SM, evaluation=Evaluation.PASS, mode=ThinkingMode.FAST,
                tokens=100, time_per_step=None, labeled=None) -> TrialRecord:
    difficulty = 4.0 if mode == ThinkingMode.SLOW else 1.0
    return TrialRecord(
        task_id=task_id, group=group, scenario_seed=1, n_pairs=2, world=WorldConfig(seed=1),
        mode_decision=ModeDecision(mode=mode, predicted_difficulty=difficulty),
        total_input_tokens=tokens, time_per_step_s=time_per_step, evaluation=evaluation,
        labeled_difficulty=labeled
    )


class TestSummarize:
    """Aggregation of trial records."""

    def test_task_row(self):
        records = [
            make_record(tokens=100, time_per_step=0.2),
            make_record(evaluation=Evaluation.FAIL, mode=ThinkingMode.SLOW, tokens=300),
            make_record(evaluation=Evaluation.SKIPPED),
        ]
        row = summarize_task("SM-1", records)
        assert row.trials == 2
        assert row.skipped == 1
        assert row.success_rate == pytest.approx(50.0)
        assert row.avg_input_tokens == pytest.approx(200.0)
        assert row.avg_time_per_step_s == pytest.approx(0.2)
        assert row.slow_mode_fraction == pytest.approx(0.5)

    def test_difficulty_columns(self):
        records = [
            make_record(labeled=2.0),
            make_record(mode=ThinkingMode.SLOW, labeled=2.0),
            make_record(mode=ThinkingMode.SLOW, evaluation=Evaluation.SKIPPED, labeled=2.0),
        ]
        row = summarize_task("SM-1", records)
        assert row.avg_predicted_difficulty == pytest.approx(2.5)
        assert row.labeled_difficulty == pytest.approx(2.0)

    def test_difficulty_columns_without_decisions(self):
        record = make_record()
        record.mode_decision = None
        row = summarize_task("SM-1", [record])
        assert row.avg_predicted_difficulty is None
        assert row.labeled_difficulty is None

    def test_group_rates_and_modes(self):
        records = [
            make_record("SM-1"), make_record("SM-2", evaluation=Evaluation.FAIL),
            make_record("SR-1", TaskGroup.SR, mode=ThinkingMode.SLOW),
        ]
        report = summarize(records, "canonical", 42)
        assert [t.task_id for t in report.tasks] == ["SM-1", "SM-2", "SR-1"]
        assert report.group_rates == {"SM": 50.0, "SR": 100.0}
        assert report.mode_distribution["SR"] == {"fast": 0, "slow": 1}
        assert report.total_trials == 3

    def test_all_skipped_task_has_zero_rate(self):
        report = summarize([make_record(evaluation=Evaluation.SKIPPED)], "x", 0)
        assert report.tasks[0].trials == 0
        assert report.tasks[0].success_rate == 0.0
        assert report.group_rates == {}


class TestReportFiles:
    """summary.csv and trials.jsonl."""

    def test_summary_columns(self, tmp_path):
        report = summarize([make_record(), make_record("SR-1", TaskGroup.SR)], "canonical", 42)
        path = tmp_path / "summary.csv"
        write_summary_csv(report, path)
        with open(path, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        assert rows[0] == SUMMARY_COLUMNS
        assert rows[0][:7] == [
            "task_id", "group", "trials", "success_rate", "avg_time_per_step_s",
            "avg_input_tokens", "slow_mode_fraction"
        ]
        assert rows[1][:4] == ["SM-1", "SM", "1", "100.0"]
        assert rows[1][4] == ""

    def test_summary_difficulty_values(self, tmp_path):
        records = [make_record(labeled=1.0), make_record(mode=ThinkingMode.SLOW, labeled=1.0)]
        path = tmp_path / "summary.csv"
        write_summary_csv(summarize(records, "canonical", 42), path)
        with open(path, newline='', encoding='utf-8') as f:
            row = next(csv.DictReader(f))
        assert row["avg_predicted_difficulty"] == "2.50"
        assert row["labeled_difficulty"] == "1.0"

    def test_trials_reload(self, tmp_path):
        records = [make_record(), make_record("SR-1", TaskGroup.SR, evaluation=Evaluation.FAIL)]
        path = tmp_path / "trials.jsonl"
        write_trials(records, path)
        assert load_trials(path) == records

    def test_missing_trials_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_trials(tmp_path / "nope.jsonl")


class TestBenchmarkRunner:
    """Small suites run end to end."""

    def test_oracle_run_writes_reports(self, tmp_path):
        tasks = [catalog_by_id()[task_id] for task_id in ("SM-1", "PM-1", "FR-1")]
        runner = BenchmarkRunner(OracleBackend(), scenarios_per_task=2, goals_per_scenario=1)
        report = runner.run_suite("mini", 42, out_dir=str(tmp_path), tasks=tasks)
        assert report.total_trials == 6
        assert all(task.success_rate == 100.0 for task in report.tasks)
        assert (tmp_path / "trials.jsonl").exists()
        assert (tmp_path / "summary.csv").exists()
        assert len(load_trials(tmp_path / "trials.jsonl")) == 6
        by_id = {task.task_id: task for task in report.tasks}
        assert by_id["SM-1"].labeled_difficulty == pytest.approx(catalog_by_id()["SM-1"].labeled_difficulty)
        assert by_id["FR-1"].avg_predicted_difficulty is not None

    def test_parallel_run_matches_serial(self):
        tasks = [catalog_by_id()["SA-1"]]
        serial = BenchmarkRunner(OracleBackend(), scenarios_per_task=2, goals_per_scenario=2)
        threaded = BenchmarkRunner(OracleBackend(), parallel=4, scenarios_per_task=2, goals_per_scenario=2)
        first = serial.run_suite("mini", 7, tasks=tasks)
        second = threaded.run_suite("mini", 7, tasks=tasks)
        assert first.group_rates == second.group_rates
        assert [t.avg_input_tokens for t in first.tasks] == [t.avg_input_tokens for t in second.tasks]

    def test_failing_backend_still_completes(self):
        runner = BenchmarkRunner(FaultBackend("silent"), scenarios_per_task=1, goals_per_scenario=2)
        report = runner.run_suite("mini", 42, tasks=[catalog_by_id()["SM-1"]])
        assert report.total_trials == 2
        assert report.group_rates["SM"] == 0.0

    def test_incompatible_scenarios_are_skipped(self):
        task_def = catalog_by_id()["SM-1"]
        task_def.min_pairs = 5
        runner = BenchmarkRunner(OracleBackend(), scenarios_per_task=2, goals_per_scenario=1)
        report = runner.run_suite("mini", 42, tasks=[task_def])
        assert report.tasks[0].skipped == 2
        assert report.tasks[0].trials == 0
        assert report.tasks[0].labeled_difficulty == pytest.approx(task_def.labeled_difficulty)
