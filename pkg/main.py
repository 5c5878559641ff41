"""
Main script for the tabletop manipulation benchmark.
"""
import argparse
import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from config.bench_config import DEFAULT_MASTER_SEED, INVOCATION_BUDGET, LOG_FILE, SLOW_THRESHOLD, SUMMARY_FILE
from src.core.agent import DualThinkingAgent
from src.core.config import config
from src.core.instructions import InstructionParseError, build_adhoc_task
from src.core.models import AgentConfig, ModeOverride, SuiteReport, TaskSummary, TrialRecord, WorldConfig
from src.core.monitor import PlanActionMemory
from src.core.oracle import OracleBackend
from src.core.reasoner import FAULT_MODES, BackendConfigError, FaultBackend, HttpBackend, ReasonerBackend
from src.core.replay import ReplayDivergence, replay_records
from src.core.suite import BenchmarkRunner, load_trials, summarize, write_summary_csv
from src.core.tasks import SUITES, apply_overrides, select_suite
from src.core.world import SceneState, WorldError, spawn_scene

logger = logging.getLogger(__name__)
console = Console()

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_DIVERGENCE = 4

CONFIG_KEYS = {
    "suite", "master_seed", "backend", "model", "budget", "mode",
    "parallel", "open_loop", "noise", "overrides"
}


class ConfigError(Exception):
    """Invalid command-line or suite configuration."""
    pass


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(LOG_FILE),
            logging.StreamHandler(sys.stdout)
        ]
    )
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


def create_backend(spec: str, model: Optional[str] = None, slow_threshold: float = SLOW_THRESHOLD) -> ReasonerBackend:
    """Backend for a --backend value: oracle, http or fault:<mode>."""
    if spec == "oracle":
        return OracleBackend(slow_threshold=slow_threshold)
    if spec == "http":
        return HttpBackend(model_name=model)
    if spec.startswith("fault:"):
        return FaultBackend(spec.split(":", 1)[1])
    raise ConfigError(f"unknown backend {spec}; use oracle, http or fault:<{'|'.join(FAULT_MODES)}>")


def load_suite_config(path: Optional[str]) -> Dict[str, Any]:
    """Suite config JSON; credentials are never accepted here."""
    if not path:
        return {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read suite config {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError("suite config must be a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown suite config keys: {', '.join(unknown)}")
    return data


def _pick(cli_value, file_config: Dict[str, Any], key: str, default):
    if cli_value is not None:
        return cli_value
    return file_config.get(key, default)


def load_scene_file(path: str) -> SceneState:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read scene file {path}: {e}")
    try:
        return SceneState.from_snapshot(data)
    except WorldError as e:
        raise ConfigError(str(e))


class TabletopBenchSystem:
    """Runs suites, single instructions and replays from the command line."""

    def __init__(self, backend_spec: str = "oracle", model: Optional[str] = None,
                 agent_config: Optional[AgentConfig] = None):
        self.agent_config = agent_config or AgentConfig()
        self.backend = create_backend(backend_spec, model, self.agent_config.slow_threshold)

    def run_benchmark(self, suite: str, master_seed: int, parallel: int, out_dir: str,
                      overrides: Optional[Dict[str, dict]] = None) -> SuiteReport:
        task_defs = select_suite(suite)
        if overrides:
            task_defs = apply_overrides(task_defs, overrides)
        runner = BenchmarkRunner(self.backend, self.agent_config, parallel)
        return runner.run_suite(suite, master_seed, out_dir, tasks=task_defs)

    def solve(self, instruction: str, scene: SceneState) -> TrialRecord:
        task = build_adhoc_task(instruction, scene)
        logger.info(f"🚀 Solving {instruction!r} on {len(scene.objects)} objects (difficulty {task.difficulty:.1f})")
        agent = DualThinkingAgent(self.backend, self.agent_config)
        return agent.run_trial(task, scene)


def _difficulty_cell(task: TaskSummary) -> str:
    predicted = "-" if task.avg_predicted_difficulty is None else f"{task.avg_predicted_difficulty:.2f}"
    labeled = "-" if task.labeled_difficulty is None else f"{task.labeled_difficulty:.1f}"
    return f"{predicted} / {labeled}"


def print_report(report: SuiteReport):
    table = Table(title=f"Suite {report.suite} (seed {report.master_seed})")
    columns = ["Task", "Group", "Trials", "Success %", "s/step", "Input tokens", "Slow %",
               "Difficulty (pred / label)", "Redundant", "Skipped"]
    for column in columns:
        table.add_column(column, justify="left" if column in ("Task", "Group") else "right")
    for task in report.tasks:
        table.add_row(
            task.task_id, task.group.value, str(task.trials), f"{task.success_rate:.1f}",
            "-" if task.avg_time_per_step_s is None else f"{task.avg_time_per_step_s:.4f}",
            f"{task.avg_input_tokens:.1f}", f"{100 * task.slow_mode_fraction:.0f}",
            _difficulty_cell(task), str(task.redundant_actions), str(task.skipped)
        )
    console.print(table)

    groups = Table(title="Per-group results")
    for column in ["Group", "Success %", "Fast", "Slow"]:
        groups.add_column(column, justify="left" if column == "Group" else "right")
    for group, rate in report.group_rates.items():
        modes = report.mode_distribution.get(group, {})
        groups.add_row(group, f"{rate:.1f}", str(modes.get("fast", 0)), str(modes.get("slow", 0)))
    console.print(groups)


def print_trace(record: TrialRecord):
    decision = record.mode_decision
    if decision is not None:
        console.print(
            f"[bold]Mode:[/bold] {decision.mode.value} "
            f"(difficulty {decision.predicted_difficulty:.1f}{', override' if decision.overridden else ''})"
        )
    for entry in record.rationales:
        console.print(f"[bold]Rationale #{entry.sequence}[/bold] (invocation {entry.invocation_index})")
        console.print(entry.text)

    table = Table(title="Plan-action trace")
    for column in ["#", "Primitive", "Args", "Result", "Achieved"]:
        table.add_column(column)
    for step in record.steps:
        if step.verdict is not None and not step.verdict.valid:
            result = f"rejected: {step.verdict.reason}"
        elif step.outcome is not None and not step.outcome.success:
            result = f"failed: {step.outcome.error}"
        elif step.post_check is not None and step.post_check.deviated:
            result = f"deviated {step.post_check.distance:.3f} m"
        else:
            result = "ok"
        if step.superseded:
            result += " (superseded)"
        achieved = step.outcome.achieved.fmt() if step.outcome and step.outcome.achieved else ""
        table.add_row(str(step.index), step.call.primitive, json.dumps(step.call.args), result, achieved)
    console.print(table)

    style = "green" if record.evaluation.value == "pass" else "red"
    console.print(
        f"[bold]Predicted status:[/bold] {record.predicted_status.value}   "
        f"[bold]Verdict:[/bold] [{style}]{record.evaluation.value}[/{style}]   "
        f"invocations {record.invocation_count}/{record.invocation_budget}, "
        f"input tokens {record.total_input_tokens}"
    )
    if record.diagnostics:
        console.print(f"[yellow]Diagnostics:[/yellow] {record.diagnostics}")


def _agent_config(budget: int, mode: str, open_loop: bool, noise: float) -> AgentConfig:
    try:
        return AgentConfig(
            invocation_budget=budget, mode_override=ModeOverride(mode),
            closed_loop=not open_loop, noise_sigma=noise
        )
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid agent settings: {e}")


def cmd_bench_run(args) -> int:
    file_config = load_suite_config(args.config)
    suite = _pick(args.suite, file_config, "suite", "canonical")
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite}; choose from {', '.join(SUITES)}")
    master_seed = int(_pick(args.seed, file_config, "master_seed", DEFAULT_MASTER_SEED))
    parallel = int(_pick(args.parallel, file_config, "parallel", config.run.parallel))
    if parallel < 1:
        raise ConfigError("parallel must be at least 1")
    agent_config = _agent_config(
        budget=int(_pick(args.budget, file_config, "budget", INVOCATION_BUDGET)),
        mode=_pick(args.mode, file_config, "mode", "auto"),
        open_loop=bool(args.open_loop or file_config.get("open_loop", False)),
        noise=float(_pick(args.noise, file_config, "noise", config.run.observation_noise))
    )
    out_dir = args.out or config.run.output_dir

    system = TabletopBenchSystem(
        backend_spec=_pick(args.backend, file_config, "backend", "oracle"),
        model=_pick(args.model, file_config, "model", None),
        agent_config=agent_config
    )
    try:
        report = system.run_benchmark(suite, master_seed, parallel, out_dir, file_config.get("overrides"))
    except ValueError as e:
        raise ConfigError(str(e))

    print_report(report)
    console.print(f"💾 Trials: {report.trials_path}")
    console.print(f"💾 Summary: {report.summary_path}")
    return EXIT_OK


def cmd_bench_report(args) -> int:
    try:
        records = load_trials(args.trials)
    except (OSError, ValidationError, ValueError) as e:
        raise ConfigError(f"cannot load trials: {e}")
    if not records:
        raise ConfigError(f"no trial records in {args.trials}")

    report = summarize(records, Path(args.trials).stem, master_seed=0)
    out_dir = Path(args.out) if args.out else Path(args.trials).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / SUMMARY_FILE
    write_summary_csv(report, summary_path)
    logger.info(f"💾 Wrote {summary_path} from {len(records)} records")
    print_report(report)
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.scene:
        scene = load_scene_file(args.scene)
    elif args.pairs is not None:
        seed = args.seed if args.seed is not None else DEFAULT_MASTER_SEED
        try:
            scene = spawn_scene(WorldConfig(seed=seed), args.pairs, seed)
        except WorldError as e:
            raise ConfigError(str(e))
    else:
        raise ConfigError("solve needs --scene FILE or --pairs N")

    agent_config = _agent_config(
        budget=args.budget, mode=args.mode, open_loop=args.open_loop, noise=config.run.observation_noise
    )
    system = TabletopBenchSystem(backend_spec=args.backend, model=args.model, agent_config=agent_config)
    record = system.solve(args.instruction, scene)
    print_trace(record)
    if args.trace:
        memory = PlanActionMemory.restore(record.steps, record.rationales, record.notes)
        trace_path = Path(args.trace)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        trace_path.write_text(memory.to_jsonl() + "\n", encoding="utf-8")
        console.print(f"💾 Trace: {trace_path}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        records: List[TrialRecord] = load_trials(args.trial)
    except (OSError, ValidationError, ValueError) as e:
        raise ConfigError(f"cannot load trials: {e}")
    replayed = replay_records(records)
    console.print(f"✅ {len(records)} trials replayed cleanly ({replayed} executed calls)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Dual-thinking tabletop manipulation benchmark")
    parser.add_argument("--verbose", action="store_true", help="Enable verbose logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("bench-run", help="Run a benchmark suite")
    run.add_argument("--suite", choices=sorted(SUITES), help="Suite to run (default canonical)")
    run.add_argument("--seed", type=int, help="Master seed")
    run.add_argument("--backend", type=str, help="oracle, http or fault:<mode>")
    run.add_argument("--model", type=str, help="Model name for the http backend")
    run.add_argument("--budget", type=int, help="Reasoner invocations per trial")
    run.add_argument("--mode", choices=[m.value for m in ModeOverride], help="Thinking mode override")
    run.add_argument("--parallel", type=int, help="Concurrent trials")
    run.add_argument("--out", type=str, help="Output directory")
    run.add_argument("--config", type=str, help="Suite config JSON")
    run.add_argument("--open-loop", action="store_true", help="Disable feedback and replanning")
    run.add_argument("--noise", type=float, help="Observation noise sigma in meters")
    run.set_defaults(handler=cmd_bench_run)

    report = subparsers.add_parser("bench-report", help="Re-aggregate an existing trials.jsonl")
    report.add_argument("--trials", type=str, required=True, help="trials.jsonl to summarize")
    report.add_argument("--out", type=str, help="Directory for summary.csv")
    report.set_defaults(handler=cmd_bench_report)

    solve = subparsers.add_parser("solve", help="Run one trial for a free-form instruction")
    solve.add_argument("--instruction", type=str, required=True)
    solve.add_argument("--scene", type=str, help="Scene snapshot JSON")
    solve.add_argument("--pairs", type=int, help="Spawn N block/bowl pairs")
    solve.add_argument("--seed", type=int, help="Seed for a spawned scene")
    solve.add_argument("--backend", type=str, default="oracle")
    solve.add_argument("--model", type=str)
    solve.add_argument("--budget", type=int, default=INVOCATION_BUDGET)
    solve.add_argument("--mode", choices=[m.value for m in ModeOverride], default="auto")
    solve.add_argument("--open-loop", action="store_true")
    solve.add_argument("--trace", type=str, help="Write the plan-action trace as JSON lines")
    solve.set_defaults(handler=cmd_solve)

    replay = subparsers.add_parser("replay", help="Re-simulate recorded trials")
    replay.add_argument("--trial", type=str, required=True, help="trials.jsonl file")
    replay.set_defaults(handler=cmd_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    problems = config.validate()
    if problems:
        for problem in problems:
            logger.error(f"❌ {problem}")
        return EXIT_CONFIG

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"❌ {e}")
        return EXIT_CONFIG
    except InstructionParseError as e:
        logger.error(f"❌ {e}")
        return EXIT_CONFIG
    except BackendConfigError as e:
        logger.error(f"❌ Backend initialization failed: {e}")
        return EXIT_BACKEND
    except ReplayDivergence as e:
        logger.error(f"❌ Replay diverged at {e}")
        return EXIT_DIVERGENCE
    except KeyboardInterrupt:
        logger.info("⏸️  Interrupted by user")
        return 1
    except Exception as e:
        logger.error(f"❌ {args.command} failed: {e}")
        if args.verbose:
            logger.error(traceback.format_exc())
        return 1


if __name__ == "__main__":
    sys.exit(main())
