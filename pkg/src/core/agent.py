"""
Dual-thinking agent: mode selection, the fast and slow loops and the trial lifecycle.
"""
import logging
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

from config.bench_config import PROMPTS_DIR, SUCCESS_DELTA
from .evaluation import evaluate, evaluate_feasibility
from .models import (
    AgentConfig, Evaluation, Feasibility, HistoryMessage, MessageRole, ModeDecision,
    ModeOverride, Observation, RationaleEntry, ReasonerRequest, Stage, TaskInstance,
    ThinkingMode, TrialRecord, TrialStatus, WorldConfig
)
from .monitor import ExecutionMonitor, PlanActionMemory, render_context
from .primitives import (
    FINISH, MOVEMENT_PRIMITIVES, PrimitiveParseError, execute_call, make_call,
    parse_call, primitive_docs
)
from .prompts import (
    ACTION_GENERATION, COT_REASONING, MODE_SELECTOR, PromptLibrary, render_observation_table
)
from .reasoner import RationaleParseError, ReasonerBackend, parse_rationale
from .world import SceneState, observe, spawn_scene

logger = logging.getLogger(__name__)

DIFFICULTY_PATTERN = re.compile(r"DIFFICULTY\s*[:=]\s*([0-9]+(?:\.[0-9]+)?)", re.IGNORECASE)
MODE_PATTERN = re.compile(r"MODE\s*[:=]\s*(fast|slow)", re.IGNORECASE)
SIGNALS_PATTERN = re.compile(r"SIGNALS\s*[:=]\s*(.+)", re.IGNORECASE)
DEFAULT_DIFFICULTY = 3.0


class BudgetExhausted(Exception):
    """The trial used every reasoner invocation it was allowed."""
    pass


class ActionResult(str, Enum):
    EXECUTED = "executed"
    REJECTED = "rejected"
    FAILED = "failed"
    DEVIATED = "deviated"
    PARSE_FAILED = "parse_failed"
    FINISHED = "finished"


RECOVERY_RESULTS = {ActionResult.REJECTED, ActionResult.FAILED, ActionResult.DEVIATED}


class InvocationSession:
    """Counts invocations and tokens for one trial and enforces the budget."""

    def __init__(self, backend: ReasonerBackend, budget: int):
        self.backend = backend
        self.budget = budget
        self.count = 0
        self.input_tokens = 0
        self.output_tokens = 0

    def invoke(self, messages: List[dict], stage: Stage) -> str:
        if self.count >= self.budget:
            raise BudgetExhausted(f"invocation budget of {self.budget} exhausted")
        self.count += 1
        response = self.backend.complete(ReasonerRequest(
            messages=messages, invocation_budget=self.budget, stage=stage
        ))
        self.input_tokens += response.input_token_count
        self.output_tokens += response.output_token_count
        return response.text


@dataclass
class TrialState:
    """Everything one trial owns while it runs."""
    session: InvocationSession
    memory: PlanActionMemory
    monitor: ExecutionMonitor
    initial_observation: Observation
    predicted_status: TrialStatus = TrialStatus.FAILURE
    diagnostics: List[str] = field(default_factory=list)
    parse_failures: int = 0


def parse_mode_reply(text: str, slow_threshold: float = 3.0) -> Optional[ModeDecision]:
    """Mode decision from selector text; None when no usable difficulty is present."""
    match = DIFFICULTY_PATTERN.search(text)
    if match is None:
        return None
    difficulty = float(match.group(1))
    if not 1.0 <= difficulty <= 5.0:
        return None

    mode = ThinkingMode.SLOW if difficulty >= slow_threshold else ThinkingMode.FAST
    token = MODE_PATTERN.search(text)
    if token and token.group(1).lower() != mode.value:
        logger.debug(f"Selector said {token.group(1)} for difficulty {difficulty}; using {mode.value}")
    signals = SIGNALS_PATTERN.search(text)
    return ModeDecision(
        mode=mode, predicted_difficulty=difficulty,
        signals=signals.group(1).strip() if signals else "",
        slow_threshold=slow_threshold
    )


class DualThinkingAgent:
    """Runs trials with fast (single-stage) or slow (reason-then-act) thinking."""

    def __init__(self, backend: ReasonerBackend, agent_config: Optional[AgentConfig] = None,
                 prompts: Optional[PromptLibrary] = None):
        self.backend = backend
        self.config = agent_config or AgentConfig()
        self.prompts = prompts or PromptLibrary(PROMPTS_DIR)

    def _new_state(self, backend: ReasonerBackend, scene: SceneState) -> TrialState:
        memory = PlanActionMemory()
        return TrialState(
            session=InvocationSession(backend, self.config.invocation_budget),
            memory=memory,
            monitor=ExecutionMonitor(memory, self.config.monitor_threshold, self.config.closed_loop),
            initial_observation=observe(scene, self.config.noise_sigma)
        )

    def _feedback_table(self, scene: SceneState) -> Optional[str]:
        if not self.config.closed_loop:
            return None
        return render_observation_table(observe(scene, self.config.noise_sigma))

    def select_mode(self, instruction: str, observation: Observation, session: InvocationSession) -> ModeDecision:
        """One selector invocation; unusable replies fall back to slow thinking."""
        prompt = self.prompts.render(
            MODE_SELECTOR, instruction=instruction,
            observation_table=render_observation_table(observation)
        )
        messages = [
            {"role": MessageRole.SYSTEM.value, "content": prompt.system},
            {"role": MessageRole.USER.value, "content": prompt.user},
        ]
        text = session.invoke(messages, Stage.MODE_SELECTION)
        decision = parse_mode_reply(text, self.config.slow_threshold)
        if decision is None:
            logger.warning("⚠️  Unparseable mode selector reply, defaulting to slow thinking")
            decision = ModeDecision(
                mode=ThinkingMode.SLOW, predicted_difficulty=DEFAULT_DIFFICULTY,
                signals="unparseable selector reply", slow_threshold=self.config.slow_threshold,
                overridden=DEFAULT_DIFFICULTY < self.config.slow_threshold
            )
        return decision

    def _act(self, task: TaskInstance, scene: SceneState, state: TrialState,
             mode: ThinkingMode, rationale: Optional[RationaleEntry] = None) -> ActionResult:
        """One action invocation: parse, pre-check, execute, post-check."""
        guidance = f"PLAN TO FOLLOW:\n{rationale.text}" if rationale else ""
        prompt = self.prompts.render(
            ACTION_GENERATION, instruction=task.instruction,
            observation_table=render_observation_table(state.initial_observation),
            primitive_docs=primitive_docs(), rationale=guidance
        )
        text = state.session.invoke(render_context(state.memory, prompt, mode), Stage.ACTION)
        index = state.session.count
        intent = self._current_intent(state, rationale)

        try:
            call = parse_call(text)
        except PrimitiveParseError as e:
            state.parse_failures += 1
            logger.debug(f"Unparseable action reply ({e})")
            state.memory.add_note(HistoryMessage(
                role=MessageRole.FEEDBACK,
                content=f"Could not parse a primitive call: {e}. Reply with exactly one JSON call.",
                invocation_index=index
            ), reply=text)
            return ActionResult.PARSE_FAILED

        verdict = state.monitor.pre_execution_check(
            call, scene, scene.config, intent=intent, invocation_index=index,
            observation_table=self._feedback_table(scene)
        )
        if not verdict.valid:
            return ActionResult.REJECTED

        outcome = execute_call(call, scene, self.config.noise_sigma)
        step = state.monitor.record_execution(
            call, outcome, intent=intent, invocation_index=index,
            observation_table=self._feedback_table(scene) if call.primitive in MOVEMENT_PRIMITIVES else None
        )
        if outcome.terminal:
            state.predicted_status = outcome.finish_status
            return ActionResult.FINISHED
        if not outcome.success:
            return ActionResult.FAILED
        if step.post_check is not None and step.post_check.deviated:
            return ActionResult.DEVIATED
        return ActionResult.EXECUTED

    @staticmethod
    def _current_intent(state: TrialState, rationale: Optional[RationaleEntry]) -> Optional[str]:
        """Plan item the next movement is expected to carry out."""
        if rationale is None:
            return None
        done = sum(
            1 for s in state.memory.steps
            if s.sequence > rationale.sequence and s.executed and s.call.primitive in MOVEMENT_PRIMITIVES
        )
        plan = rationale.rationale.plan
        return plan[done] if done < len(plan) else None

    def _finish_infeasible(self, scene: SceneState, state: TrialState, entry: RationaleEntry):
        """Close the trial on an infeasible rationale without another invocation."""
        reason = entry.rationale.justification or "task is infeasible"
        call = make_call(FINISH, status=TrialStatus.INFEASIBLE.value, message=reason)
        outcome = execute_call(call, scene)
        state.monitor.record_execution(call, outcome, intent="report infeasibility",
                                       invocation_index=entry.invocation_index)
        state.predicted_status = TrialStatus.INFEASIBLE

    def _reason(self, task: TaskInstance, scene: SceneState, state: TrialState) -> Optional[RationaleEntry]:
        """Reasoning invocation with a single retry on an unparseable rationale."""
        prompt = self.prompts.render(
            COT_REASONING, instruction=task.instruction,
            observation_table=render_observation_table(state.initial_observation),
            primitive_docs=primitive_docs()
        )
        for attempt in range(2):
            text = state.session.invoke(render_context(state.memory, prompt, ThinkingMode.SLOW), Stage.REASONING)
            try:
                rationale = parse_rationale(text)
            except RationaleParseError as e:
                logger.warning(f"⚠️  Rationale rejected on attempt {attempt + 1}: {e}")
                state.memory.add_note(HistoryMessage(
                    role=MessageRole.FEEDBACK,
                    content=f"Rationale rejected: {e}. Reply with the five numbered sections.",
                    invocation_index=state.session.count
                ), reply=text)
                continue
            return state.memory.add_rationale(text, rationale, state.session.count)
        return None

    def _fast_loop(self, task: TaskInstance, scene: SceneState, state: TrialState):
        max_parse_failures = 2 * self.config.invocation_budget
        while state.parse_failures < max_parse_failures:
            if self._act(task, scene, state, ThinkingMode.FAST) == ActionResult.FINISHED:
                return
        state.diagnostics.append("too many unparseable replies")

    def _slow_loop(self, task: TaskInstance, scene: SceneState, state: TrialState):
        entry = self._reason(task, scene, state)
        max_parse_failures = 2 * self.config.invocation_budget
        while state.parse_failures < max_parse_failures:
            if entry is None:
                state.diagnostics.append("rationale unparseable after retry")
                return
            if entry.rationale.feasibility == Feasibility.INFEASIBLE:
                self._finish_infeasible(scene, state, entry)
                return

            result = self._act(task, scene, state, ThinkingMode.SLOW, entry)
            if result == ActionResult.FINISHED:
                return
            if result in RECOVERY_RESULTS and self.config.closed_loop:
                logger.debug(f"Replanning after {result.value} action")
                entry = self._reason(task, scene, state)
        state.diagnostics.append("too many unparseable replies")

    def _decide(self, task: TaskInstance, state: TrialState, mode: Optional[ThinkingMode]) -> ModeDecision:
        forced = mode
        if forced is None and self.config.mode_override != ModeOverride.AUTO:
            forced = ThinkingMode(self.config.mode_override.value)
        if forced is not None:
            return ModeDecision(
                mode=forced, predicted_difficulty=task.difficulty, signals="mode override",
                slow_threshold=self.config.slow_threshold, overridden=True
            )
        return self.select_mode(task.instruction, state.initial_observation, state.session)

    def run_fast(self, task: TaskInstance, scene: Optional[SceneState] = None) -> TrialRecord:
        return self.run_trial(task, scene, mode=ThinkingMode.FAST)

    def run_slow(self, task: TaskInstance, scene: Optional[SceneState] = None) -> TrialRecord:
        return self.run_trial(task, scene, mode=ThinkingMode.SLOW)

    def run_trial(self, task: TaskInstance, scene: Optional[SceneState] = None,
                  mode: Optional[ThinkingMode] = None) -> TrialRecord:
        """Run one trial end to end; internal errors become a failed record."""
        start = time.perf_counter()
        world = scene.config if scene is not None else WorldConfig(failure=task.failure, seed=task.scenario_seed)
        backend = self.backend.for_task(task)
        record = TrialRecord(
            task_id=task.task_id, group=task.group, instruction=task.instruction,
            scenario_index=task.scenario_index, scenario_seed=task.scenario_seed,
            n_pairs=task.n_pairs, goal_seed=task.goal_seed, backend=backend.name,
            world=world, noise_sigma=self.config.noise_sigma, closed_loop=self.config.closed_loop,
            invocation_budget=self.config.invocation_budget, feasibility_label=task.feasibility_label,
            labeled_difficulty=task.labeled_difficulty
        )
        state = None
        try:
            if scene is None:
                scene = spawn_scene(world, task.n_pairs, task.scenario_seed)
            record.initial_scene = scene.to_snapshot()
            state = self._new_state(backend, scene)
            decision = self._decide(task, state, mode)
            record.mode_decision = decision
            logger.debug(f"{task.task_id}: {decision.mode.value} thinking (difficulty {decision.predicted_difficulty})")
            if decision.mode == ThinkingMode.FAST:
                self._fast_loop(task, scene, state)
            else:
                self._slow_loop(task, scene, state)
        except BudgetExhausted as e:
            state.predicted_status = TrialStatus.FAILURE
            state.diagnostics.append(str(e))
        except Exception as e:
            logger.error(f"❌ Trial {task.task_id} (scenario {task.scenario_index}) crashed: {e}")
            logger.debug("Trial traceback", exc_info=True)
            record.diagnostics = f"{type(e).__name__}: {e}"

        return self._finalize(record, task, scene, state, time.perf_counter() - start)

    def _finalize(self, record: TrialRecord, task: TaskInstance, scene: Optional[SceneState],
                  state: Optional[TrialState], wall_time: float) -> TrialRecord:
        if state is not None:
            memory = state.memory
            record.steps = memory.steps
            record.rationales = memory.rationales
            record.notes = memory.notes
            record.invocation_count = state.session.count
            record.total_input_tokens = state.session.input_tokens
            record.total_output_tokens = state.session.output_tokens
            record.recovery_events = memory.recovery_events()
            record.predicted_status = state.predicted_status
            if state.diagnostics and record.diagnostics is None:
                record.diagnostics = "; ".join(state.diagnostics)

            moves = [s for s in memory.steps if s.executed and s.call.primitive in MOVEMENT_PRIMITIVES]
            record.steps_completed = sum(
                1 for s in moves if s.outcome.success and s.post_check is not None and not s.post_check.deviated
            )
            record.redundant_actions = sum(
                1 for s in moves if s.outcome.success and s.outcome.moved_object not in task.goal.targets
            )

        record.wall_time_s = wall_time
        record.time_per_step_s = wall_time / record.steps_completed if record.steps_completed else None

        if scene is None:
            record.evaluation = Evaluation.FAIL
            return record
        record.final_scene = scene.to_snapshot()
        if task.feasibility_label == Feasibility.INFEASIBLE:
            record.evaluation = evaluate_feasibility(record.predicted_status, task.feasibility_label)
            return record
        try:
            result = evaluate(scene, task.goal, SUCCESS_DELTA)
            record.evaluation = result.verdict
            record.distances = result.distances
            record.contained = result.contained
        except Exception as e:
            record.evaluation = Evaluation.FAIL
            record.diagnostics = f"{type(e).__name__}: {e}"
        return record
