"""
Action-primitive catalog, call wire format, parsing and validation.
"""
import json
import logging
import math
from typing import Any, Dict, List

from .models import (
    ArgType, ExecutionOutcome, ObjectKind, PrimitiveCall, PrimitiveCategory,
    PrimitiveSpec, TrialStatus, ValidationVerdict, Vec3, WorldConfig
)
from .world import (
    BLOCK_EDGE, BOWL_INTERIOR_Z, TABLE_BLOCK_Z, SceneState, WorldError,
    find_blocker, observe, resolve_support, step_pick, step_place
)

logger = logging.getLogger(__name__)

GET_OBSERVATION = "get_observation"
PICK_PLACE_AT = "pick_place_at"
PICK_PLACE_ON = "pick_place_on"
FINISH = "finish"

CATALOG: Dict[str, PrimitiveSpec] = {
    spec.name: spec for spec in [
        PrimitiveSpec(
            name=GET_OBSERVATION,
            category=PrimitiveCategory.PERCEPTION,
            parameters=[],
            description="Return the id, kind, color and position of every object on the table."
        ),
        PrimitiveSpec(
            name=PICK_PLACE_AT,
            category=PrimitiveCategory.EXECUTION,
            parameters=[("object", ArgType.OBJECT_REF), ("position", ArgType.POSITION)],
            description="Pick a block and release it at position [x, y] or [x, y, z] in meters."
        ),
        PrimitiveSpec(
            name=PICK_PLACE_ON,
            category=PrimitiveCategory.EXECUTION,
            parameters=[("object", ArgType.OBJECT_REF), ("base", ArgType.OBJECT_REF)],
            description="Pick a block and put it into a bowl or on top of another block."
        ),
        PrimitiveSpec(
            name=FINISH,
            category=PrimitiveCategory.CONTROL,
            parameters=[("status", ArgType.STATUS), ("message", ArgType.TEXT)],
            description="End the task with status success, failure or infeasible and a short message."
        ),
    ]
}

MOVEMENT_PRIMITIVES = {PICK_PLACE_AT, PICK_PLACE_ON}
STATUS_VALUES = [status.value for status in TrialStatus]


class PrimitiveParseError(Exception):
    """Reasoner output could not be turned into a primitive call."""
    pass


def primitive_docs() -> str:
    """Catalog rendered for prompts."""
    lines = []
    for spec in CATALOG.values():
        params = ", ".join(f"{name}: {arg_type.value}" for name, arg_type in spec.parameters)
        lines.append(f"- {spec.name}({params}) [{spec.category.value}] {spec.description}")
    return "\n".join(lines)


def _check_arg(name: str, arg_type: ArgType, value: Any) -> Any:
    if arg_type == ArgType.OBJECT_REF:
        if not isinstance(value, str) or not value.strip():
            raise PrimitiveParseError(f"bad arguments: '{name}' must be an object id")
        return value.strip()
    if arg_type == ArgType.POSITION:
        if not isinstance(value, list) or len(value) not in (2, 3):
            raise PrimitiveParseError(f"bad arguments: '{name}' must be [x, y] or [x, y, z]")
        coords = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise PrimitiveParseError(f"bad arguments: '{name}' holds a non-numeric coordinate")
            coords.append(float(v))
        return coords
    if arg_type == ArgType.STATUS:
        if value not in STATUS_VALUES:
            raise PrimitiveParseError(f"bad arguments: '{name}' must be one of {', '.join(STATUS_VALUES)}")
        return value
    if not isinstance(value, str):
        raise PrimitiveParseError(f"bad arguments: '{name}' must be text")
    return value


def _build_call(payload: Dict[str, Any], text: str) -> PrimitiveCall:
    name = payload.get("primitive")
    if not isinstance(name, str) or name not in CATALOG:
        raise PrimitiveParseError(f"unknown primitive {name}")

    args = payload.get("args", {})
    if not isinstance(args, dict):
        raise PrimitiveParseError("bad arguments: args must be an object")

    spec = CATALOG[name]
    expected = [param for param, _ in spec.parameters]
    missing = [param for param in expected if param not in args]
    extra = sorted(set(args) - set(expected))
    if missing:
        raise PrimitiveParseError(f"bad arguments: missing {', '.join(missing)}")
    if extra:
        raise PrimitiveParseError(f"bad arguments: unexpected {', '.join(extra)}")

    checked = {param: _check_arg(param, arg_type, args[param]) for param, arg_type in spec.parameters}
    return PrimitiveCall(primitive=name, args=checked, raw_text=text)


def parse_call(text: str) -> PrimitiveCall:
    """Extract the first {"primitive": ..., "args": ...} object from reasoner output."""
    decoder = json.JSONDecoder()
    index = text.find("{")
    while index != -1:
        try:
            payload, _ = decoder.raw_decode(text, index)
        except json.JSONDecodeError:
            payload = None
        if isinstance(payload, dict) and "primitive" in payload:
            return _build_call(payload, text)
        index = text.find("{", index + 1)
    raise PrimitiveParseError("no call found")


def serialize_call(call: PrimitiveCall) -> str:
    return json.dumps({"primitive": call.primitive, "args": call.args})


def make_call(primitive: str, **args) -> PrimitiveCall:
    call = PrimitiveCall(primitive=primitive, args=args)
    call.raw_text = serialize_call(call)
    return call


def position_target(position: List[float]) -> Vec3:
    z = position[2] if len(position) > 2 else TABLE_BLOCK_Z
    return Vec3(x=position[0], y=position[1], z=z)


def place_on_target(scene: SceneState, base_id: str) -> Vec3:
    """Release point for putting an object into a bowl or onto a block."""
    base = scene.get(base_id)
    if base.kind == ObjectKind.BOWL:
        return Vec3(x=base.pose.x, y=base.pose.y, z=BOWL_INTERIOR_Z)
    top = scene.top_of(base_id)
    return Vec3(x=top.pose.x, y=top.pose.y, z=top.pose.z + BLOCK_EDGE)


def validate_call(call: PrimitiveCall, scene: SceneState, config: WorldConfig) -> ValidationVerdict:
    """Check a parsed call against the scene without mutating it."""
    spec = CATALOG.get(call.primitive)
    if spec is None:
        return ValidationVerdict.reject(f"unknown primitive {call.primitive}")
    if spec.category != PrimitiveCategory.EXECUTION:
        return ValidationVerdict.accept()

    if scene.held is not None:
        return ValidationVerdict.reject(f"gripper busy holding {scene.held}; {call.primitive} not allowed now")

    ref = call.args["object"]
    if not scene.has(ref):
        return ValidationVerdict.reject(f"unknown object {ref} (argument 'object')")
    obj = scene.get(ref)
    if obj.kind == ObjectKind.BOWL:
        return ValidationVerdict.reject(f"cannot move bowl {ref}: only blocks can be moved")
    above = scene.supported_by(ref)
    if above:
        return ValidationVerdict.reject(f"object buried: {ref} is under {above[0].id}")

    if call.primitive == PICK_PLACE_AT:
        target = position_target(call.args["position"])
        if not config.workspace.contains(target.x, target.y):
            return ValidationVerdict.reject(f"target out of workspace: position {target.fmt()}")
    else:
        base_id = call.args["base"]
        if not scene.has(base_id):
            return ValidationVerdict.reject(f"unknown object {base_id} (argument 'base')")
        if base_id == ref:
            return ValidationVerdict.reject(f"cannot place {ref} on itself (argument 'base')")
        occupants = [o.id for o in scene.supported_by(base_id) if o.id != ref]
        if occupants:
            base = scene.get(base_id)
            if base.kind == ObjectKind.BOWL:
                return ValidationVerdict.reject(f"bowl {base_id} already holds {occupants[0]} (argument 'base')")
            return ValidationVerdict.reject(f"base {base_id} is covered by {occupants[0]} (argument 'base')")

    dry = scene.copy()
    step_pick(dry, ref)
    if call.primitive == PICK_PLACE_ON:
        target = place_on_target(dry, call.args["base"])
    support, settled = resolve_support(dry, target)
    blocker = find_blocker(dry, support, settled, ignore=ref)
    if blocker is not None:
        return ValidationVerdict.reject(f"target blocked by {blocker} at position {target.fmt()}")
    return ValidationVerdict.accept()


def execute_call(call: PrimitiveCall, scene: SceneState, noise_sigma: float = 0.0) -> ExecutionOutcome:
    """Run a validated call; simulator errors come back as failed outcomes."""
    if call.primitive == GET_OBSERVATION:
        return ExecutionOutcome(primitive=call.primitive, success=True, observation=observe(scene, noise_sigma))

    if call.primitive == FINISH:
        return ExecutionOutcome(
            primitive=call.primitive,
            success=True,
            finish_status=TrialStatus(call.args["status"]),
            finish_message=call.args["message"]
        )

    ref = call.args.get("object")
    base_id = call.args.get("base")
    try:
        obj = scene.get(ref)
        original_pose, original_support = obj.pose, obj.supported_by
        step_pick(scene, ref)
    except WorldError as e:
        return ExecutionOutcome(primitive=call.primitive, success=False, error=str(e), moved_object=ref)

    try:
        if call.primitive == PICK_PLACE_AT:
            target = position_target(call.args["position"])
        else:
            target = place_on_target(scene, base_id)
        placed = step_place(scene, target)
    except WorldError as e:
        obj.pose, obj.supported_by = original_pose, original_support
        scene.held = None
        logger.debug(f"Placement of {ref} failed, restored to {original_pose.fmt()}: {e}")
        return ExecutionOutcome(primitive=call.primitive, success=False, error=str(e), moved_object=ref)

    return ExecutionOutcome(
        primitive=call.primitive,
        success=True,
        moved_object=ref,
        base_object=base_id,
        intended=placed.intended,
        achieved=placed.achieved,
        support=placed.support,
        dropped=placed.dropped
    )
