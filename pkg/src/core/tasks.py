"""
Benchmark task catalog, scenario generation and goal instantiation.

Task wordings are authored for this benchmark; every group keeps its intended
skill (simple moves, arrangement, stacking, pattern matching, spatial and
conditional reasoning, sequencing, feasibility recognition, language variation
and error recovery).
"""
import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from config.bench_config import ER_DROP_PROBABILITY, MAX_PAIRS, MIN_PAIRS, SCENARIOS_PER_TASK
from .models import (
    CANONICAL_GROUPS, ROBUSTNESS_GROUPS, Feasibility, FailureProfile, GoalSpec,
    ObjectKind, RigidObject, Scenario, TaskGroup, TaskInstance, Vec3, WorldConfig
)
from .world import (
    BLOCK_EDGE, BOWL_INTERIOR_Z, FOOTPRINT_CLEARANCE, PALETTE, TABLE_BLOCK_Z,
    SceneState, block_id, bowl_id, horizontal_distance, spawn_scene
)

logger = logging.getLogger(__name__)

EDGE = 0.24
LINE_SPACING = 0.08
COLUMN_SLOTS = [-0.15, -0.05, 0.05, 0.15]
FREE_RANGE = 0.2
GOAL_CLEARANCE = FOOTPRINT_CLEARANCE + 0.01
MAX_FREE_POINT_DRAWS = 200
MAX_GOAL_ATTEMPTS = 20

SUITES = {
    "canonical": CANONICAL_GROUPS,
    "robustness": ROBUSTNESS_GROUPS,
    "all": CANONICAL_GROUPS + ROBUSTNESS_GROUPS,
}

Builder = Callable[[SceneState, np.random.Generator], Tuple[str, GoalSpec]]


class TaskInstantiationError(Exception):
    """A task cannot be posed on the given scenario."""
    pass


@dataclass
class TaskDef:
    """One catalog entry."""
    task_id: str
    group: TaskGroup
    labeled_difficulty: float
    builder: Builder
    description: str
    feasibility_label: Feasibility = Feasibility.FEASIBLE
    failure: FailureProfile = field(default_factory=FailureProfile)
    min_pairs: int = 2


# ---------------------------------------------------------------------------
# scene helpers

def color_of(object_id: str) -> str:
    return object_id.partition("_")[2]


def _blocks(scene: SceneState) -> List[RigidObject]:
    return [o for o in scene.objects if o.kind == ObjectKind.BLOCK]


def _bowls(scene: SceneState) -> List[RigidObject]:
    return [o for o in scene.objects if o.kind == ObjectKind.BOWL]


def _shuffled(items: list, rng: np.random.Generator) -> list:
    return [items[int(i)] for i in rng.permutation(len(items))]


def _pick(items: list, rng: np.random.Generator):
    return items[int(rng.integers(len(items)))]


def _names(objects: List[RigidObject]) -> str:
    colors = [o.color for o in objects]
    if len(colors) == 1:
        return colors[0]
    return ", ".join(colors[:-1]) + f" and {colors[-1]}"


def _noun(objects: List[RigidObject]) -> str:
    return "block" if len(objects) == 1 else "blocks"


def _point(x: float, y: float, z: float) -> Vec3:
    return Vec3(x=round(x, 3), y=round(y, 3), z=round(z, 3))


def _fmt_xy(point: Vec3) -> str:
    return f"({point.x:.3f}, {point.y:.3f})"


def _pose_of(obj: RigidObject) -> Vec3:
    return _point(obj.pose.x, obj.pose.y, obj.pose.z)


def _is_clear(scene: SceneState, x: float, y: float, ignore: List[str], taken: List[Vec3]) -> bool:
    for obj in scene.objects:
        if obj.id in ignore:
            continue
        if math.hypot(obj.pose.x - x, obj.pose.y - y) < GOAL_CLEARANCE:
            return False
    return all(math.hypot(p.x - x, p.y - y) >= GOAL_CLEARANCE for p in taken)


def _free_point(scene: SceneState, rng: np.random.Generator, mover: str,
                taken: Optional[List[Vec3]] = None) -> Vec3:
    """Table point clear of every object except the mover."""
    taken = taken or []
    for _ in range(MAX_FREE_POINT_DRAWS):
        x, y = rng.uniform(-FREE_RANGE, FREE_RANGE, size=2)
        point = _point(float(x), float(y), TABLE_BLOCK_Z)
        if _is_clear(scene, point.x, point.y, [mover], taken):
            return point
    raise TaskInstantiationError("scenario incompatible: no free goal point")


def _into_bowl(goal: GoalSpec, block: RigidObject, bowl: RigidObject):
    goal.targets[block.id] = _point(bowl.pose.x, bowl.pose.y, BOWL_INTERIOR_Z)
    goal.bowl_targets[block.id] = bowl.id
    goal.referenced.extend([block.id, bowl.id])


def _tower(goal: GoalSpec, base_pose: Vec3, order: List[RigidObject]):
    """Stack order[0..] upward from base_pose, which the first object occupies."""
    for level, obj in enumerate(order):
        goal.targets[obj.id] = _point(base_pose.x, base_pose.y, base_pose.z + level * BLOCK_EDGE)
        goal.referenced.append(obj.id)


def _by_distance(blocks: List[RigidObject], anchor: RigidObject) -> List[RigidObject]:
    return sorted(blocks, key=lambda b: (horizontal_distance(b.pose, anchor.pose), b.id))


# ---------------------------------------------------------------------------
# builders

def build_sm_block_to_bowl(scene, rng):
    block, bowl = _pick(_blocks(scene), rng), _pick(_bowls(scene), rng)
    goal = GoalSpec()
    _into_bowl(goal, block, bowl)
    return f"Put the {block.color} block in the {bowl.color} bowl.", goal


def build_sm_block_to_point(scene, rng):
    block = _pick(_blocks(scene), rng)
    point = _free_point(scene, rng, block.id)
    goal = GoalSpec(targets={block.id: point}, referenced=[block.id])
    return f"Move the {block.color} block to {_fmt_xy(point)}.", goal


def build_sa_line(scene, rng):
    order = _shuffled(_blocks(scene), rng)
    side = _pick(["top", "bottom"], rng)
    y = EDGE if side == "top" else -EDGE
    start = -LINE_SPACING * (len(order) - 1) / 2
    goal = GoalSpec()
    for i, block in enumerate(order):
        goal.targets[block.id] = _point(start + i * LINE_SPACING, y, TABLE_BLOCK_Z)
        goal.referenced.append(block.id)
    instruction = (
        f"Arrange the {_names(order)} blocks in a line along the {side} edge (y = {y:.2f}), "
        f"{LINE_SPACING:.2f} m apart and centered on x = 0, in that order from left to right."
    )
    return instruction, goal


CORNERS = {
    "top-left": (-EDGE, EDGE),
    "top-right": (EDGE, EDGE),
    "bottom-right": (EDGE, -EDGE),
    "bottom-left": (-EDGE, -EDGE),
}


def build_sa_corners(scene, rng):
    blocks = _blocks(scene)
    corners = _shuffled(list(CORNERS), rng)
    goal = GoalSpec()
    parts = []
    for block, corner in zip(blocks, corners):
        x, y = CORNERS[corner]
        goal.targets[block.id] = _point(x, y, TABLE_BLOCK_Z)
        goal.referenced.append(block.id)
        parts.append(f"the {block.color} block in the {corner} corner")
    return f"Put {', '.join(parts)} of the table (corners at ±{EDGE:.2f} m).", goal


def build_sa_halves(scene, rng):
    order = _shuffled(_blocks(scene), rng)
    cut = (len(order) + 1) // 2
    left, right = order[:cut], order[cut:]
    goal = GoalSpec()
    for x, group in ((-EDGE, left), (EDGE, right)):
        for slot, block in zip(COLUMN_SLOTS, group):
            goal.targets[block.id] = _point(x, slot, TABLE_BLOCK_Z)
            goal.referenced.append(block.id)
    slots = ", ".join(f"{y:.2f}" for y in COLUMN_SLOTS)
    instruction = (
        f"Move the {_names(left)} {_noun(left)} to the left edge (x = -{EDGE:.2f}) and "
        f"the {_names(right)} {_noun(right)} to the right edge (x = {EDGE:.2f}); "
        f"along each edge use y = {slots} in the order named."
    )
    return instruction, goal


def build_ss_named_order(scene, rng):
    order = _shuffled(_blocks(scene), rng)
    goal = GoalSpec()
    _tower(goal, _pose_of(order[0]), order)
    instruction = (
        f"Stack all blocks on the {order[0].color} block, which stays where it is: "
        f"{_names(order)} from bottom to top."
    )
    return instruction, goal


def build_ss_palette_order(scene, rng):
    order = sorted(_blocks(scene), key=lambda b: PALETTE.index(b.color))
    goal = GoalSpec()
    _tower(goal, _pose_of(order[0]), order)
    instruction = (
        f"Stack all blocks into one tower following the color order {', '.join(PALETTE)} from bottom to top; "
        f"the bottom block stays where it is."
    )
    return instruction, goal


def build_pm_same_color(scene, rng):
    goal = GoalSpec()
    for block in _blocks(scene):
        _into_bowl(goal, block, scene.get(bowl_id(block.color)))
    return "Put every block into the bowl of the same color.", goal


def build_pm_cycle(scene, rng):
    order = _shuffled(_blocks(scene), rng)
    goal = GoalSpec()
    for i, block in enumerate(order):
        target = order[(i + 1) % len(order)]
        _into_bowl(goal, block, scene.get(bowl_id(target.color)))
    cycle = " → ".join([b.color for b in order] + [order[0].color])
    return f"Put each block into the bowl of the next color in the cycle {cycle}.", goal


def build_pm_pairing(scene, rng):
    blocks = _blocks(scene)
    bowls = _shuffled(_bowls(scene), rng)
    goal = GoalSpec()
    parts = []
    for block, bowl in zip(blocks, bowls):
        _into_bowl(goal, block, bowl)
        parts.append(f"the {block.color} block with the {bowl.color} bowl")
    return f"Pair them up, each block going into its bowl: {'; '.join(parts)}.", goal


def build_sr_closest(scene, rng):
    bowl = _pick(_bowls(scene), rng)
    closest = _by_distance(_blocks(scene), bowl)[0]
    goal = GoalSpec()
    _into_bowl(goal, closest, bowl)
    goal.referenced = [bowl.id]
    return f"Put the block that is closest to the {bowl.color} bowl into that bowl.", goal


def build_sr_midpoint(scene, rng):
    mover = _pick(_blocks(scene), rng)
    others = [o for o in scene.objects if o.id != mover.id]
    pairs = [(a, b) for i, a in enumerate(others) for b in others[i + 1:]]
    for a, b in _shuffled(pairs, rng):
        point = _point((a.pose.x + b.pose.x) / 2, (a.pose.y + b.pose.y) / 2, TABLE_BLOCK_Z)
        if _is_clear(scene, point.x, point.y, [mover.id], []):
            goal = GoalSpec(targets={mover.id: point}, referenced=[mover.id, a.id, b.id])
            instruction = (
                f"Place the {mover.color} block at the midpoint between the "
                f"{a.color} {a.kind.value} and the {b.color} {b.kind.value}."
            )
            return instruction, goal
    raise TaskInstantiationError("scenario incompatible: no free midpoint")


def build_sr_distance_stack(scene, rng):
    bowl = _pick(_bowls(scene), rng)
    order = _by_distance(_blocks(scene), bowl)
    goal = GoalSpec()
    _tower(goal, _pose_of(order[0]), order)
    goal.referenced.append(bowl.id)
    instruction = (
        f"Stack all blocks ordered by their distance to the {bowl.color} bowl: the nearest block stays "
        f"where it is at the bottom and the farthest goes on top."
    )
    return instruction, goal


def build_cr_if_else(scene, rng):
    a, b = _shuffled(_blocks(scene), rng)[:2]
    x, y = _pick(_bowls(scene), rng), _pick(_bowls(scene), rng)
    goal = GoalSpec()
    if horizontal_distance(a.pose, x.pose) < horizontal_distance(b.pose, x.pose):
        _into_bowl(goal, a, x)
    else:
        _into_bowl(goal, b, y)
    goal.referenced = [a.id, b.id, x.id, y.id]
    instruction = (
        f"If the {a.color} block is closer to the {x.color} bowl than the {b.color} block is, "
        f"put the {a.color} block into the {x.color} bowl; otherwise put the {b.color} block "
        f"into the {y.color} bowl."
    )
    return instruction, goal


def build_cr_chain(scene, rng):
    a, b = _shuffled(_blocks(scene), rng)[:2]
    c, d = _shuffled(_bowls(scene), rng)[:2]
    goal = GoalSpec()
    left_of = a.pose.x < b.pose.x
    closer = horizontal_distance(b.pose, c.pose) < horizontal_distance(b.pose, d.pose)
    if left_of and closer:
        base = _pose_of(b)
        goal.targets[b.id] = base
        goal.targets[a.id] = _point(base.x, base.y, base.z + BLOCK_EDGE)
    else:
        _into_bowl(goal, a, c)
    goal.referenced = [a.id, b.id, c.id, d.id]
    instruction = (
        f"If the {a.color} block is left of the {b.color} block and the {b.color} block is closer to "
        f"the {c.color} bowl than to the {d.color} bowl, stack the {a.color} block on the {b.color} block; "
        f"otherwise put the {a.color} block into the {c.color} bowl."
    )
    return instruction, goal


def build_sp_sequence(scene, rng):
    a, b = _shuffled(_blocks(scene), rng)[:2]
    bowl = scene.get(bowl_id(a.color))
    point = _free_point(scene, rng, a.id)
    goal = GoalSpec()
    _into_bowl(goal, b, bowl)
    inside = goal.targets[b.id]
    goal.targets[a.id] = _point(inside.x, inside.y, inside.z + BLOCK_EDGE)
    goal.referenced.append(a.id)
    instruction = (
        f"First move the {a.color} block to {_fmt_xy(point)}, then put the {b.color} block into the "
        f"{a.color} bowl, and finally stack the {a.color} block on the {b.color} block."
    )
    return instruction, goal


def build_sp_interleaved(scene, rng):
    blocks = _shuffled(_blocks(scene), rng)
    bowls = _shuffled(_bowls(scene), rng)
    goal = GoalSpec()
    parts = []
    for i in range(len(blocks) // 2):
        lower, upper, bowl = blocks[2 * i], blocks[2 * i + 1], bowls[i]
        _into_bowl(goal, lower, bowl)
        inside = goal.targets[lower.id]
        goal.targets[upper.id] = _point(inside.x, inside.y, inside.z + BLOCK_EDGE)
        goal.referenced.append(upper.id)
        parts.append(
            f"put the {lower.color} block into the {bowl.color} bowl and stack the {upper.color} block on it"
        )
    return f"{'; then '.join(parts).capitalize()}.", goal


def build_fr_absent(scene, rng):
    present = {o.color for o in scene.objects}
    absent = _pick([c for c in PALETTE if c not in present], rng)
    bowl = _pick(_bowls(scene), rng)
    goal = GoalSpec(referenced=[block_id(absent), bowl.id])
    return f"Put the {absent} block into the {bowl.color} bowl.", goal


def build_lr_sm(scene, rng):
    block, bowl = _pick(_blocks(scene), rng), _pick(_bowls(scene), rng)
    goal = GoalSpec()
    _into_bowl(goal, block, bowl)
    return f"Could you drop the {block.color} cube inside the {bowl.color} dish for me?", goal


def build_lr_pm(scene, rng):
    goal = GoalSpec()
    for block in _blocks(scene):
        _into_bowl(goal, block, scene.get(bowl_id(block.color)))
    return "Tidy up: every cube should end up in the dish that shares its color.", goal


def build_er_tower(scene, rng):
    blocks = _blocks(scene)
    base = _pick(blocks, rng)
    rest = _shuffled([b for b in blocks if b.id != base.id], rng)
    bowl = scene.get(bowl_id(base.color))
    goal = GoalSpec()
    _into_bowl(goal, base, bowl)
    inside = goal.targets[base.id]
    for level, block in enumerate(rest, start=1):
        goal.targets[block.id] = _point(inside.x, inside.y, inside.z + level * BLOCK_EDGE)
        goal.referenced.append(block.id)
    order = [base] + rest
    instruction = (
        f"Build a tower inside the {base.color} bowl: {_names(order)} from bottom to top. "
        f"The gripper may drop blocks; check the scene after every move."
    )
    return instruction, goal


def build_catalog() -> List[TaskDef]:
    """All 21 tasks in report order."""
    er_failure = FailureProfile(drop_probability=ER_DROP_PROBABILITY)
    return [
        TaskDef("SM-1", TaskGroup.SM, 1.0, build_sm_block_to_bowl, "block into a bowl"),
        TaskDef("SM-2", TaskGroup.SM, 1.5, build_sm_block_to_point, "block to coordinates"),
        TaskDef("SA-1", TaskGroup.SA, 2.0, build_sa_line, "line along an edge"),
        TaskDef("SA-2", TaskGroup.SA, 2.5, build_sa_corners, "blocks into corners"),
        TaskDef("SA-3", TaskGroup.SA, 2.5, build_sa_halves, "left and right edges"),
        TaskDef("SS-1", TaskGroup.SS, 3.0, build_ss_named_order, "stack in a named order"),
        TaskDef("SS-2", TaskGroup.SS, 3.5, build_ss_palette_order, "stack in palette order"),
        TaskDef("PM-1", TaskGroup.PM, 1.5, build_pm_same_color, "same-color bowls"),
        TaskDef("PM-2", TaskGroup.PM, 2.0, build_pm_cycle, "cyclic cross-color bowls"),
        TaskDef("PM-3", TaskGroup.PM, 2.0, build_pm_pairing, "named pairing"),
        TaskDef("SR-1", TaskGroup.SR, 4.0, build_sr_closest, "closest block into a bowl"),
        TaskDef("SR-2", TaskGroup.SR, 4.5, build_sr_midpoint, "midpoint placement"),
        TaskDef("SR-3", TaskGroup.SR, 4.5, build_sr_distance_stack, "stack by distance"),
        TaskDef("CR-1", TaskGroup.CR, 4.0, build_cr_if_else, "if-then-else on distance"),
        TaskDef("CR-2", TaskGroup.CR, 4.5, build_cr_chain, "two-relation condition"),
        TaskDef("SP-1", TaskGroup.SP, 2.0, build_sp_sequence, "first, then, finally"),
        TaskDef("SP-2", TaskGroup.SP, 2.5, build_sp_interleaved, "interleaved bowl and stack"),
        TaskDef("FR-1", TaskGroup.FR, 2.5, build_fr_absent, "absent color",
                feasibility_label=Feasibility.INFEASIBLE),
        TaskDef("LR-1", TaskGroup.LR, 1.5, build_lr_sm, "paraphrased block into bowl"),
        TaskDef("LR-2", TaskGroup.LR, 1.5, build_lr_pm, "paraphrased same-color bowls"),
        TaskDef("ER-1", TaskGroup.ER, 3.5, build_er_tower, "tower inside a bowl under drops", failure=er_failure),
    ]


def select_suite(suite: str, catalog: Optional[List[TaskDef]] = None) -> List[TaskDef]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite}; choose from {', '.join(SUITES)}")
    groups = SUITES[suite]
    return [task for task in (catalog or build_catalog()) if task.group in groups]


def scale_difficulty(base: float, n_pairs: int) -> float:
    """Shift the three-pair base score by 0.5 per pair, clamped to [1, 5]."""
    return min(5.0, max(1.0, base + 0.5 * (n_pairs - 3)))


def generate_scenarios(master_seed: int, count: int = SCENARIOS_PER_TASK) -> List[Scenario]:
    """Pair counts and derived scene seeds, a pure function of master_seed."""
    if count < 1:
        raise ValueError("scenario count must be at least 1")
    rng = np.random.default_rng(master_seed)
    pair_counts = rng.integers(MIN_PAIRS, MAX_PAIRS + 1, size=count)
    scenarios = []
    for index in range(count):
        seed = int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])
        scenarios.append(Scenario(index=index, n_pairs=int(pair_counts[index]), seed=seed))
    return scenarios


def goal_rng(scenario: Scenario, goal_seed: int, task_id: str, attempt: int = 0) -> np.random.Generator:
    entropy = [scenario.seed, goal_seed, zlib.crc32(task_id.encode()), attempt]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def instantiate_task(task_def: TaskDef, scenario: Scenario, goal_seed: int) -> TaskInstance:
    """Render the instruction and goal of task_def on scenario's scene."""
    if scenario.n_pairs < task_def.min_pairs:
        raise TaskInstantiationError("scenario incompatible")

    world = WorldConfig(failure=task_def.failure, seed=scenario.seed)
    for attempt in range(MAX_GOAL_ATTEMPTS):
        scene = spawn_scene(world, scenario.n_pairs, scenario.seed)
        try:
            instruction, goal = task_def.builder(scene, goal_rng(scenario, goal_seed, task_def.task_id, attempt))
        except TaskInstantiationError as e:
            logger.debug(f"{task_def.task_id} scenario {scenario.index} goal {goal_seed}: {e}, resampling")
            continue
        goal.referenced = list(dict.fromkeys(goal.referenced))
        return TaskInstance(
            task_id=task_def.task_id,
            group=task_def.group,
            instruction=instruction,
            goal=goal,
            feasibility_label=task_def.feasibility_label,
            failure=task_def.failure,
            labeled_difficulty=task_def.labeled_difficulty,
            difficulty=scale_difficulty(task_def.labeled_difficulty, scenario.n_pairs),
            n_pairs=scenario.n_pairs,
            scenario_index=scenario.index,
            scenario_seed=scenario.seed,
            goal_seed=goal_seed
        )
    raise TaskInstantiationError("scenario incompatible")


def catalog_by_id(catalog: Optional[List[TaskDef]] = None) -> Dict[str, TaskDef]:
    return {task.task_id: task for task in (catalog or build_catalog())}


def apply_overrides(task_defs: List[TaskDef], overrides: Dict[str, dict]) -> List[TaskDef]:
    """Copies of task_defs with per-task failure profiles from a suite config."""
    unknown = sorted(set(overrides) - {task.task_id for task in task_defs})
    if unknown:
        raise ValueError(f"overrides name unknown tasks: {', '.join(unknown)}")
    adjusted = []
    for task in task_defs:
        override = overrides.get(task.task_id)
        if override is None:
            adjusted.append(task)
            continue
        failure = FailureProfile.model_validate({**task.failure.model_dump(), **override.get("failure", {})})
        adjusted.append(replace(task, failure=failure))
    return adjusted
