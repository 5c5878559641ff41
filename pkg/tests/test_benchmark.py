"""Full-suite acceptance runs with the scripted oracle.

These take a while; select them with ``pytest -m bench``.
"""
import csv

import pytest

from src.core.models import AgentConfig, Evaluation, Feasibility, ModeOverride, TaskGroup, ThinkingMode
from src.core.oracle import OracleBackend
from src.core.replay import replay_records
from src.core.suite import BenchmarkRunner, load_trials
from src.core.tasks import build_catalog, catalog_by_id, generate_scenarios, instantiate_task

pytestmark = pytest.mark.bench

WALL_CLOCK_COLUMN = "avg_time_per_step_s"


def run(tasks=None, suite="all", agent_config=None, out_dir=None, master_seed=42):
    runner = BenchmarkRunner(OracleBackend(), agent_config)
    return runner.run_suite(suite, master_seed, out_dir=out_dir, tasks=tasks)


def read_summary(path):
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        row.pop(WALL_CLOCK_COLUMN)
    return rows


def is_recovery(step) -> bool:
    if step.verdict is not None and not step.verdict.valid:
        return True
    if step.outcome is not None and not step.outcome.success:
        return True
    return step.post_check is not None and step.post_check.deviated


@pytest.fixture(scope="module")
def all_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("all")
    report = run(out_dir=str(out))
    return report, load_trials(out / "trials.jsonl")


class TestOracleCompleteness:
    """The oracle solves every feasible task and flags the infeasible one."""

    def test_every_deterministic_task_is_solved(self, all_suite):
        report, _ = all_suite
        assert report.total_trials == 1050
        for task in report.tasks:
            if task.group != TaskGroup.ER:
                assert task.success_rate == 100.0, task.task_id

    def test_infeasible_predictions(self, all_suite):
        _, records = all_suite
        fr = [r for r in records if r.feasibility_label == Feasibility.INFEASIBLE]
        assert len(fr) == 50
        assert all(r.evaluation == Evaluation.PASS for r in fr)

    def test_budget_is_respected(self, all_suite):
        _, records = all_suite
        assert all(r.invocation_count <= r.invocation_budget for r in records)

    def test_every_trial_replays(self, all_suite):
        _, records = all_suite
        assert replay_records(records) > 0


class TestModeSelection:
    """Scripted selector routes groups to the expected mode."""

    def test_reasoning_groups_run_slow(self, all_suite):
        _, records = all_suite
        for record in records:
            if record.group in (TaskGroup.SR, TaskGroup.CR):
                assert record.mode_decision.mode == ThinkingMode.SLOW
            if record.group in (TaskGroup.SM, TaskGroup.LR):
                assert record.mode_decision.mode == ThinkingMode.FAST

    def test_switch_point(self, all_suite):
        _, records = all_suite
        fast = [r.mode_decision.predicted_difficulty for r in records if r.mode_decision.mode == ThinkingMode.FAST]
        slow = [r.mode_decision.predicted_difficulty for r in records if r.mode_decision.mode == ThinkingMode.SLOW]
        assert 2.5 <= max(fast) < min(slow) <= 3.5


class TestErrorRecovery:
    """Drops are recovered from only with feedback and replanning."""

    def test_closed_versus_open_loop(self):
        er = [catalog_by_id()["ER-1"]]
        closed = run(er, suite="er")
        opened = run(er, suite="er", agent_config=AgentConfig(closed_loop=False))
        assert closed.tasks[0].success_rate >= 95.0
        assert opened.tasks[0].success_rate <= 50.0

    def test_one_rationale_per_recovery(self, all_suite):
        _, records = all_suite
        er = [r for r in records if r.group == TaskGroup.ER]
        assert len(er) == 50
        for record in er:
            last_reasoned = record.rationales[-1].sequence
            unanswered = sum(1 for step in record.steps if is_recovery(step) and step.sequence > last_reasoned)
            assert len(record.rationales) == 1 + record.recovery_events - unanswered
            if unanswered:
                assert unanswered == 1
                assert record.invocation_count == record.invocation_budget


def test_slow_thinking_costs_more_tokens():
    canonical = [t for t in build_catalog() if t.group in (TaskGroup.SM, TaskGroup.SA, TaskGroup.PM, TaskGroup.SR)]
    fast = run(canonical, "canonical", AgentConfig(mode_override=ModeOverride.FAST))
    slow = run(canonical, "canonical", AgentConfig(mode_override=ModeOverride.SLOW))
    dual = run(canonical, "canonical")
    assert fast.avg_input_tokens < dual.avg_input_tokens < slow.avg_input_tokens


def test_same_seed_same_summary(tmp_path):
    run(suite="canonical", out_dir=str(tmp_path / "a"))
    run(suite="canonical", out_dir=str(tmp_path / "b"))
    assert read_summary(tmp_path / "a" / "summary.csv") == read_summary(tmp_path / "b" / "summary.csv")


def test_catalog_instantiates_across_seeds():
    for master_seed in range(5):
        for scenario in generate_scenarios(master_seed, 10):
            for task_def in build_catalog():
                instantiate_task(task_def, scenario, 0)
