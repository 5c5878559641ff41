"""
Execution monitor: pre/post-execution checks, feedback synthesis and plan-action memory.
"""
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

from config.bench_config import MONITOR_THRESHOLD
from .models import (
    CheckResult, ExecutionOutcome, HistoryMessage, MemoryNote, MessageRole,
    PlanStep, PostCheck, PrimitiveCall, Rationale, RationaleEntry, ThinkingMode,
    ValidationVerdict, Vec3, WorldConfig
)
from .primitives import (
    FINISH, GET_OBSERVATION, MOVEMENT_PRIMITIVES, PICK_PLACE_ON,
    serialize_call, validate_call
)
from .prompts import BasePrompt, render_observation_table
from .world import DISTANCE_SLACK, SceneState, distance

logger = logging.getLogger(__name__)

REPLAN_MARKER = "REPLAN REQUIRED"


@dataclass
class Rejected:
    reason: str
    call: Optional[PrimitiveCall] = None


@dataclass
class Deviated:
    call: PrimitiveCall
    achieved: Vec3
    intended: Vec3


@dataclass
class Executed:
    call: PrimitiveCall
    outcome: ExecutionOutcome


FeedbackEvent = Union[Rejected, Deviated, Executed]


def post_execution_check(call: PrimitiveCall, achieved: Vec3, intended: Vec3,
                         threshold: float = MONITOR_THRESHOLD) -> PostCheck:
    """Deviated iff the achieved pose is farther than threshold from the intended one."""
    gap = distance(achieved, intended)
    if gap > threshold + DISTANCE_SLACK:
        return PostCheck(result=CheckResult.DEVIATED, distance=gap)
    return PostCheck(result=CheckResult.IN_PLACE, distance=gap)


def synthesize_feedback(event: FeedbackEvent, observation_table: Optional[str] = None,
                        invocation_index: int = 0) -> HistoryMessage:
    """Deterministic feedback text for a monitor event."""
    recovery = False
    if isinstance(event, Rejected):
        content = f"Action rejected: {event.reason}. Choose a valid action."
        recovery = True
    elif isinstance(event, Deviated):
        obj = event.call.args.get("object", "object")
        gap = distance(event.achieved, event.intended)
        content = (
            f"Execution deviation on {obj}: intended {event.intended.fmt()}, "
            f"achieved {event.achieved.fmt()}, off by {gap:.3f} m. {REPLAN_MARKER}."
        )
        recovery = True
    else:
        call, outcome = event.call, event.outcome
        if call.primitive == GET_OBSERVATION:
            content = "Observation received."
        elif call.primitive == FINISH:
            content = f"Finished with status {call.args['status']}: {call.args['message']}"
        elif call.primitive == PICK_PLACE_ON:
            preposition = "into" if call.args["base"].startswith("bowl_") else "onto"
            content = f"Moved {call.args['object']} {preposition} {call.args['base']}. Achieved {outcome.achieved.fmt()}."
        else:
            content = f"Moved {call.args['object']} to {outcome.intended.fmt()}. Achieved {outcome.achieved.fmt()}."

    if observation_table:
        content = f"{content}\nCurrent scene:\n{observation_table}"
    return HistoryMessage(
        role=MessageRole.FEEDBACK, content=content,
        invocation_index=invocation_index, recovery=recovery
    )


class PlanActionMemory:
    """Append-only trace of rationales, calls, outcomes and feedback."""

    def __init__(self):
        self.steps: List[PlanStep] = []
        self.rationales: List[RationaleEntry] = []
        self.notes: List[MemoryNote] = []
        self._sequence = 0

    def _next_sequence(self) -> int:
        self._sequence += 1
        return self._sequence

    def add_step(self, call: PrimitiveCall, intent: Optional[str] = None,
                 verdict: Optional[ValidationVerdict] = None,
                 outcome: Optional[ExecutionOutcome] = None,
                 post_check: Optional[PostCheck] = None,
                 feedback: Optional[HistoryMessage] = None) -> PlanStep:
        step = PlanStep(
            index=len(self.steps), sequence=self._next_sequence(), intent=intent, call=call,
            verdict=verdict, outcome=outcome, post_check=post_check, feedback=feedback
        )
        self.steps.append(step)
        return step

    def add_rationale(self, text: str, rationale: Rationale, invocation_index: int) -> RationaleEntry:
        entry = RationaleEntry(
            sequence=self._next_sequence(), invocation_index=invocation_index,
            text=text, rationale=rationale
        )
        self.rationales.append(entry)
        return entry

    def add_note(self, message: HistoryMessage, reply: str = "") -> MemoryNote:
        note = MemoryNote(sequence=self._next_sequence(), message=message, reply=reply)
        self.notes.append(note)
        return note

    def supersede_deviations(self, object_id: str):
        """Mark earlier deviated moves of object_id as superseded by a successful retry."""
        for step in self.steps:
            if (step.post_check is not None and step.post_check.deviated
                    and step.outcome.moved_object == object_id and not step.superseded):
                step.superseded = True

    def latest_rationale(self) -> Optional[RationaleEntry]:
        return self.rationales[-1] if self.rationales else None

    def recovery_events(self) -> int:
        count = 0
        for step in self.steps:
            if step.verdict is not None and not step.verdict.valid:
                count += 1
            elif step.outcome is not None and not step.outcome.success:
                count += 1
            elif step.post_check is not None and step.post_check.deviated:
                count += 1
        return count

    def entries(self) -> List[Union[PlanStep, RationaleEntry, MemoryNote]]:
        """Every recorded entry in sequence order."""
        merged = [*self.steps, *self.rationales, *self.notes]
        return sorted(merged, key=lambda entry: entry.sequence)

    def to_jsonl(self) -> str:
        """One JSON object per entry, in the order the reasoner saw them."""
        lines = []
        for entry in self.entries():
            if isinstance(entry, PlanStep):
                line = {
                    "sequence": entry.sequence,
                    "type": "step",
                    "index": entry.index,
                    "intent": entry.intent,
                    "call": {"primitive": entry.call.primitive, "args": entry.call.args},
                    "outcome": entry.outcome.model_dump(mode='json') if entry.outcome else None,
                    "feedback": entry.feedback.content if entry.feedback else None,
                    "superseded": entry.superseded,
                }
            elif isinstance(entry, RationaleEntry):
                line = {
                    "sequence": entry.sequence,
                    "type": "rationale",
                    "invocation_index": entry.invocation_index,
                    "rationale": entry.rationale.model_dump(mode='json'),
                }
            else:
                line = {
                    "sequence": entry.sequence,
                    "type": "note",
                    "feedback": entry.message.content,
                    "reply": entry.reply,
                }
            lines.append(json.dumps(line))
        return "\n".join(lines)

    @classmethod
    def restore(cls, steps: List[PlanStep], rationales: List[RationaleEntry],
                notes: List[MemoryNote]) -> "PlanActionMemory":
        memory = cls()
        memory.steps = list(steps)
        memory.rationales = list(rationales)
        memory.notes = list(notes)
        sequences = [s.sequence for s in steps] + [r.sequence for r in rationales] + [n.sequence for n in notes]
        memory._sequence = max(sequences, default=0)
        return memory


def render_context(memory: PlanActionMemory, base_prompt: BasePrompt, mode: ThinkingMode) -> List[Dict[str, str]]:
    """Ordered chat messages for the next reasoner invocation."""
    feedback_role = MessageRole.SYSTEM.value if mode == ThinkingMode.FAST else MessageRole.ASSISTANT.value
    messages = [
        {"role": MessageRole.SYSTEM.value, "content": base_prompt.system},
        {"role": MessageRole.USER.value, "content": base_prompt.user},
    ]

    for entry in memory.entries():
        if isinstance(entry, PlanStep):
            messages.append({
                "role": MessageRole.ASSISTANT.value,
                "content": entry.call.raw_text or serialize_call(entry.call)
            })
            if entry.feedback is not None:
                messages.append({"role": feedback_role, "content": entry.feedback.content})
        elif isinstance(entry, RationaleEntry):
            messages.append({"role": MessageRole.ASSISTANT.value, "content": entry.text})
        else:
            if entry.reply:
                messages.append({"role": MessageRole.ASSISTANT.value, "content": entry.reply})
            messages.append({"role": feedback_role, "content": entry.message.content})
    return messages


class ExecutionMonitor:
    """Gates calls before execution and checks their effect afterwards."""

    def __init__(self, memory: PlanActionMemory, threshold: float = MONITOR_THRESHOLD, closed_loop: bool = True):
        self.memory = memory
        self.threshold = threshold
        self.closed_loop = closed_loop

    def pre_execution_check(self, call: PrimitiveCall, scene: SceneState, config: WorldConfig,
                            intent: Optional[str] = None, invocation_index: int = 0,
                            observation_table: Optional[str] = None) -> ValidationVerdict:
        verdict = validate_call(call, scene, config)
        if not verdict.valid:
            logger.debug(f"Rejected {call.primitive}: {verdict.reason}")
            feedback = None
            if self.closed_loop:
                feedback = synthesize_feedback(Rejected(verdict.reason, call), observation_table, invocation_index)
            self.memory.add_step(call, intent=intent, verdict=verdict, feedback=feedback)
        return verdict

    def record_execution(self, call: PrimitiveCall, outcome: ExecutionOutcome, intent: Optional[str] = None,
                         invocation_index: int = 0, observation_table: Optional[str] = None) -> PlanStep:
        """Post-check an executed call and append it with its feedback."""
        post_check = None
        if not outcome.success:
            event = Rejected(f"execution failed: {outcome.error}", call)
        elif call.primitive in MOVEMENT_PRIMITIVES:
            post_check = post_execution_check(call, outcome.achieved, outcome.intended, self.threshold)
            if post_check.deviated:
                event = Deviated(call, outcome.achieved, outcome.intended)
            else:
                event = Executed(call, outcome)
        else:
            event = Executed(call, outcome)

        feedback = None
        if self.closed_loop and call.primitive != FINISH:
            table = observation_table
            if call.primitive == GET_OBSERVATION and table is None and outcome.observation is not None:
                table = render_observation_table(outcome.observation)
            feedback = synthesize_feedback(event, table, invocation_index)

        step = self.memory.add_step(
            call, intent=intent, verdict=ValidationVerdict.accept(), outcome=outcome,
            post_check=post_check, feedback=feedback
        )
        if post_check is not None and not post_check.deviated:
            self.memory.supersede_deviations(outcome.moved_object)
        return step
