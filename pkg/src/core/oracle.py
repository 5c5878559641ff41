"""
Scripted oracle planner and the deterministic backend built on it.

The oracle sees only what a live reasoner sees: the latest observation table
in the conversation plus the task goal. It replans from every fresh table, so
feedback-driven recovery runs through the same agent loop as an HTTP backend.
"""
import logging
import time
from typing import Dict, List, Optional, Tuple

from config.bench_config import SUCCESS_DELTA
from .models import (
    Feasibility, GoalSpec, ObjectKind, Observation, ObservedObject, PrimitiveCall,
    Rationale, ReasonerRequest, ReasonerResponse, Stage, TrialStatus
)
from .primitives import FINISH, PICK_PLACE_AT, PICK_PLACE_ON, make_call
from .reasoner import (
    ReasonerBackend, estimate_text_tokens, estimate_tokens, latest_observation,
    movement_calls_after, render_rationale
)
from .world import BLOCK_EDGE, distance, horizontal_distance

logger = logging.getLogger(__name__)

STACK_XY_TOLERANCE = 0.005
STACK_Z_TOLERANCE = 0.005


def describe_missing(object_id: str) -> str:
    """'blk_pink' -> 'pink block'."""
    prefix, _, color = object_id.partition("_")
    kind = {"blk": "block", "bowl": "bowl"}.get(prefix)
    if kind is None or not color:
        return object_id
    return f"{color} {kind}"


def _stack_base(object_id: str, goal: GoalSpec) -> Optional[str]:
    """Goal object sitting directly below object_id's target, if any."""
    target = goal.targets[object_id]
    for other_id, other in sorted(goal.targets.items()):
        if other_id == object_id:
            continue
        if (horizontal_distance(target, other) <= STACK_XY_TOLERANCE
                and abs(target.z - other.z - BLOCK_EDGE) <= STACK_Z_TOLERANCE):
            return other_id
    return None


def _goal_call(object_id: str, goal: GoalSpec) -> Tuple[PrimitiveCall, str]:
    base = _stack_base(object_id, goal)
    if base is not None:
        return make_call(PICK_PLACE_ON, object=object_id, base=base), f"Stack {object_id} on {base}"
    if object_id in goal.bowl_targets:
        bowl = goal.bowl_targets[object_id]
        return make_call(PICK_PLACE_ON, object=object_id, base=bowl), f"Put {object_id} into {bowl}"
    target = goal.targets[object_id]
    position = [round(target.x, 3), round(target.y, 3), round(target.z, 3)]
    return make_call(PICK_PLACE_AT, object=object_id, position=position), f"Place {object_id} at {target.fmt()}"


def _calculations(by_id: Dict[str, ObservedObject], goal: GoalSpec, pending: List[str]) -> str:
    lines = []
    for object_id in sorted(goal.targets):
        gap = distance(by_id[object_id].pose, goal.targets[object_id])
        state = "to move" if object_id in pending else "in place"
        lines.append(f"{object_id} to goal {goal.targets[object_id].fmt()}: {gap:.3f} m ({state})")

    blocks = sorted(o.id for o in by_id.values() if o.kind == ObjectKind.BLOCK)
    for bowl in sorted(set(goal.bowl_targets.values())):
        pairs = ", ".join(
            f"{block} {horizontal_distance(by_id[block].pose, by_id[bowl].pose):.3f} m" for block in blocks
        )
        lines.append(f"distances to {bowl}: {pairs}")
    return "\n".join(lines) if lines else "No calculation needed."


def oracle_plan(observation: Observation, goal: GoalSpec, delta: float = SUCCESS_DELTA,
                instruction: str = "") -> Tuple[List[PrimitiveCall], Rationale]:
    """Calls that take the observed scene to the goal, bottom-up, ending in finish."""
    by_id = observation.by_id()
    env = "; ".join(f"{o.id} at {o.pose.fmt()}" for o in observation.objects)
    restatement = instruction or "Bring every constrained object to its goal pose."

    needed = list(goal.referenced) + list(goal.targets) + list(goal.bowl_targets.values())
    missing = sorted({object_id for object_id in needed if object_id not in by_id})
    if missing:
        reason = f"no {describe_missing(missing[0])} exists"
        rationale = Rationale(
            env_status=env, instruction_restatement=restatement,
            feasibility=Feasibility.INFEASIBLE, justification=reason,
            calculations="No calculation needed.", plan=[]
        )
        return [make_call(FINISH, status=TrialStatus.INFEASIBLE.value, message=reason)], rationale

    ordered = sorted(goal.targets, key=lambda object_id: (goal.targets[object_id].z, object_id))
    pending = [
        object_id for object_id in ordered
        if distance(by_id[object_id].pose, goal.targets[object_id]) > delta
    ]

    calls, plan = [], []
    for object_id in pending:
        call, step = _goal_call(object_id, goal)
        calls.append(call)
        plan.append(step)
    calls.append(make_call(FINISH, status=TrialStatus.SUCCESS.value, message="all goal poses reached"))

    rationale = Rationale(
        env_status=env,
        instruction_restatement=restatement,
        feasibility=Feasibility.FEASIBLE,
        justification=f"all {len(by_id)} referenced objects are present",
        calculations=_calculations(by_id, goal, pending),
        plan=plan
    )
    return calls, rationale


class OracleBackend(ReasonerBackend):
    """Deterministic scripted reasoner that knows the task goal."""
    name = "oracle"

    def __init__(self, goal: Optional[GoalSpec] = None, difficulty: float = 3.0,
                 instruction: str = "", slow_threshold: float = 3.0):
        self.goal = goal
        self.difficulty = difficulty
        self.instruction = instruction
        self.slow_threshold = slow_threshold

    def for_task(self, task) -> "OracleBackend":
        return OracleBackend(task.goal, task.difficulty, task.instruction, self.slow_threshold)

    def complete(self, request: ReasonerRequest) -> ReasonerResponse:
        start = time.perf_counter()
        text = self._reply(request)
        return ReasonerResponse(
            text=text,
            input_token_count=estimate_tokens(request.messages),
            output_token_count=estimate_text_tokens(text),
            latency=time.perf_counter() - start
        )

    def _reply(self, request: ReasonerRequest) -> str:
        if request.stage == Stage.MODE_SELECTION:
            mode = "slow" if self.difficulty >= self.slow_threshold else "fast"
            return (
                f"DIFFICULTY: {self.difficulty:.1f}\n"
                f"MODE: {mode}\n"
                f"SIGNALS: scripted difficulty for the current task"
            )

        if self.goal is None:
            raise ValueError("oracle backend needs a task goal; call for_task first")
        index, observation = latest_observation(request.messages)
        calls, rationale = oracle_plan(observation, self.goal, instruction=self.instruction)
        if request.stage == Stage.REASONING:
            return render_rationale(rationale)

        issued = movement_calls_after(request.messages, index)
        call = calls[min(issued, len(calls) - 1)]
        logger.debug(f"Oracle emits {call.primitive} {call.args}")
        return call.raw_text
