"""
Suite runner: trial dispatch, aggregation and report files.
"""
import csv
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from config.bench_config import GOALS_PER_SCENARIO, SCENARIOS_PER_TASK, SUMMARY_FILE, TRIALS_FILE
from .agent import DualThinkingAgent
from .models import (
    AgentConfig, Evaluation, Scenario, SuiteReport, TaskGroup, TaskSummary, ThinkingMode,
    TrialRecord, WorldConfig
)
from .reasoner import ReasonerBackend
from .tasks import (
    TaskDef, TaskInstantiationError, generate_scenarios, instantiate_task, select_suite
)

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "task_id", "group", "trials", "success_rate", "avg_time_per_step_s",
    "avg_input_tokens", "slow_mode_fraction", "redundant_actions", "skipped",
    "avg_predicted_difficulty", "labeled_difficulty"
]

Job = Tuple[TaskDef, Scenario, int]


def _mean(values: List[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def summarize_task(task_id: str, records: List[TrialRecord]) -> TaskSummary:
    """Per-task row; skipped trials are excluded from every rate."""
    counted = [r for r in records if r.evaluation != Evaluation.SKIPPED]
    passed = sum(1 for r in counted if r.evaluation == Evaluation.PASS)
    slow = sum(1 for r in counted if r.mode_decision and r.mode_decision.mode == ThinkingMode.SLOW)
    return TaskSummary(
        task_id=task_id,
        group=records[0].group,
        trials=len(counted),
        success_rate=100.0 * passed / len(counted) if counted else 0.0,
        avg_time_per_step_s=_mean([r.time_per_step_s for r in counted if r.time_per_step_s is not None]),
        avg_input_tokens=_mean([r.total_input_tokens for r in counted]) or 0.0,
        slow_mode_fraction=slow / len(counted) if counted else 0.0,
        avg_predicted_difficulty=_mean([r.mode_decision.predicted_difficulty for r in counted if r.mode_decision]),
        labeled_difficulty=next((r.labeled_difficulty for r in records if r.labeled_difficulty is not None), None),
        redundant_actions=sum(r.redundant_actions for r in counted),
        skipped=len(records) - len(counted)
    )


def summarize(records: List[TrialRecord], suite: str, master_seed: int) -> SuiteReport:
    """Reduce trial records into a suite report, keeping first-seen task order."""
    by_task: Dict[str, List[TrialRecord]] = defaultdict(list)
    for record in records:
        by_task[record.task_id].append(record)
    tasks = [summarize_task(task_id, task_records) for task_id, task_records in by_task.items()]

    group_trials: Dict[str, List[TrialRecord]] = defaultdict(list)
    for record in records:
        if record.evaluation != Evaluation.SKIPPED:
            group_trials[record.group.value].append(record)

    group_rates = {}
    mode_distribution = {}
    for group in TaskGroup:
        trials = group_trials.get(group.value)
        if not trials:
            continue
        passed = sum(1 for r in trials if r.evaluation == Evaluation.PASS)
        group_rates[group.value] = 100.0 * passed / len(trials)
        modes = Counter(r.mode_decision.mode.value for r in trials if r.mode_decision)
        mode_distribution[group.value] = {mode.value: modes.get(mode.value, 0) for mode in ThinkingMode}

    counted = [r for r in records if r.evaluation != Evaluation.SKIPPED]
    return SuiteReport(
        suite=suite,
        master_seed=master_seed,
        tasks=tasks,
        group_rates=group_rates,
        mode_distribution=mode_distribution,
        avg_time_per_step_s=_mean([r.time_per_step_s for r in counted if r.time_per_step_s is not None]),
        avg_input_tokens=_mean([r.total_input_tokens for r in counted]) or 0.0,
        total_trials=len(records)
    )


def _fmt(value: Optional[float], digits: int) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def write_summary_csv(report: SuiteReport, path: Path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for task in report.tasks:
            writer.writerow([
                task.task_id, task.group.value, task.trials, _fmt(task.success_rate, 1),
                _fmt(task.avg_time_per_step_s, 4), _fmt(task.avg_input_tokens, 1),
                _fmt(task.slow_mode_fraction, 3), task.redundant_actions, task.skipped,
                _fmt(task.avg_predicted_difficulty, 2), _fmt(task.labeled_difficulty, 1)
            ])


def write_trials(records: List[TrialRecord], path: Path):
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")


def load_trials(path: Path) -> List[TrialRecord]:
    """Parse a trials.jsonl file, one record per non-empty line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Trials file not found: {path}")
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                records.append(TrialRecord.model_validate_json(line))
    return records


class BenchmarkRunner:
    """Runs every (task, scenario, goal) trial of a suite and writes the reports."""

    def __init__(self, backend: ReasonerBackend, agent_config: Optional[AgentConfig] = None,
                 parallel: int = 1, scenarios_per_task: int = SCENARIOS_PER_TASK,
                 goals_per_scenario: int = GOALS_PER_SCENARIO):
        self.agent = DualThinkingAgent(backend, agent_config)
        self.parallel = max(1, parallel)
        self.scenarios_per_task = scenarios_per_task
        self.goals_per_scenario = goals_per_scenario

    def _run_job(self, job: Job) -> TrialRecord:
        task_def, scenario, goal_seed = job
        try:
            task = instantiate_task(task_def, scenario, goal_seed)
        except TaskInstantiationError as e:
            logger.warning(f"⚠️  Skipping {task_def.task_id} scenario {scenario.index} goal {goal_seed}: {e}")
            return self._create_skipped_record(task_def, scenario, goal_seed, str(e))
        record = self.agent.run_trial(task)
        logger.debug(
            f"{task.task_id} s{scenario.index} g{goal_seed}: {record.evaluation.value} "
            f"({record.invocation_count} invocations)"
        )
        return record

    def _create_skipped_record(self, task_def: TaskDef, scenario: Scenario, goal_seed: int,
                               error_msg: str) -> TrialRecord:
        return TrialRecord(
            task_id=task_def.task_id, group=task_def.group, scenario_index=scenario.index,
            scenario_seed=scenario.seed, n_pairs=scenario.n_pairs, goal_seed=goal_seed,
            backend=self.agent.backend.name, world=WorldConfig(failure=task_def.failure, seed=scenario.seed),
            invocation_budget=self.agent.config.invocation_budget,
            feasibility_label=task_def.feasibility_label, labeled_difficulty=task_def.labeled_difficulty,
            evaluation=Evaluation.SKIPPED, diagnostics=error_msg
        )

    def run_suite(self, suite: str, master_seed: int, out_dir: Optional[str] = None,
                  tasks: Optional[List[TaskDef]] = None) -> SuiteReport:
        """Run the suite; trial failures are recorded, never raised."""
        task_defs = tasks or select_suite(suite)
        scenarios = generate_scenarios(master_seed, self.scenarios_per_task)
        logger.info(f"🚀 Running {suite} suite: {len(task_defs)} tasks, seed {master_seed}, parallel {self.parallel}")

        records: List[TrialRecord] = []
        with ThreadPoolExecutor(max_workers=self.parallel) as executor:
            for task_def in task_defs:
                jobs = [
                    (task_def, scenario, goal_seed)
                    for scenario in scenarios
                    for goal_seed in range(self.goals_per_scenario)
                ]
                task_records = list(executor.map(self._run_job, jobs))
                passed = sum(1 for r in task_records if r.evaluation == Evaluation.PASS)
                logger.info(f"📊 {task_def.task_id} ({task_def.group.value}): {passed}/{len(task_records)} passed")
                records.extend(task_records)

        report = summarize(records, suite, master_seed)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            trials_path, summary_path = out / TRIALS_FILE, out / SUMMARY_FILE
            write_trials(records, trials_path)
            write_summary_csv(report, summary_path)
            report.trials_path, report.summary_path = str(trials_path), str(summary_path)
            logger.info(f"💾 Wrote {trials_path} and {summary_path}")
        return report


def run_suite(suite: str, backend: ReasonerBackend, agent_config: Optional[AgentConfig] = None,
              master_seed: int = 42, parallel: int = 1, out_dir: Optional[str] = None) -> SuiteReport:
    return BenchmarkRunner(backend, agent_config, parallel).run_suite(suite, master_seed, out_dir)
