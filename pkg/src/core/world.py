"""
Deterministic kinematic tabletop simulator for blocks and bowls.
"""
import copy
import hashlib
import json
import logging
import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config.bench_config import MAX_PAIRS, MIN_PAIRS
from .models import (
    TABLE, ExecutionOutcome, ObjectKind, Observation, ObservedObject,
    RigidObject, Vec3, WorldConfig
)

logger = logging.getLogger(__name__)

BLOCK_EDGE = 0.05
BLOCK_HALF_EDGE = BLOCK_EDGE / 2
BOWL_RADIUS = 0.05
BOWL_INTERIOR_Z = 0.01
BOWL_REST_Z = 0.0
TABLE_BLOCK_Z = BLOCK_HALF_EDGE
FOOTPRINT_CLEARANCE = 0.06
SPAWN_MARGIN = 0.07
MAX_SPAWN_ATTEMPTS = 10_000
MAX_PLACEMENT_TRIES = 300
MAX_SCATTER_ATTEMPTS = 100
GRID_STEP = 0.01
# float slack so that a distance printed as exactly a threshold still counts as within it
DISTANCE_SLACK = 1e-12

PALETTE = ["red", "orange", "yellow", "green", "blue", "purple", "pink", "gray"]


class WorldError(Exception):
    """Simulator precondition failure."""
    pass


class CrowdedWorkspaceError(WorldError):
    """Spawn rejection sampling ran out of attempts."""
    pass


def block_id(color: str) -> str:
    return f"blk_{color}"


def bowl_id(color: str) -> str:
    return f"bowl_{color}"


def distance(a: Vec3, b: Vec3) -> float:
    """Euclidean distance between two points."""
    return float(np.linalg.norm(np.subtract(a.to_list(), b.to_list())))


def horizontal_distance(a: Vec3, b: Vec3) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


class SceneState:
    """Ground-truth world owned by a single trial."""

    def __init__(self, objects: List[RigidObject], config: WorldConfig, seed: int,
                 held: Optional[str] = None, step_counter: int = 0):
        self.objects = objects
        self.config = config
        self.seed = seed
        self.held = held
        self.step_counter = step_counter
        self.rng = np.random.default_rng(seed)
        # observation noise has its own stream so it never shifts execution randomness
        self.obs_rng = np.random.default_rng([seed, 1])

    def has(self, object_id: str) -> bool:
        return any(obj.id == object_id for obj in self.objects)

    def get(self, object_id: str) -> RigidObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise WorldError(f"unknown object {object_id}")

    @property
    def ids(self) -> List[str]:
        return [obj.id for obj in self.objects]

    def resting(self) -> List[RigidObject]:
        """Objects not currently in the gripper."""
        return [obj for obj in self.objects if obj.id != self.held]

    def supported_by(self, object_id: str) -> List[RigidObject]:
        return [obj for obj in self.resting() if obj.supported_by == object_id]

    def top_of(self, object_id: str) -> RigidObject:
        """Highest object of the tower rooted at object_id."""
        current = self.get(object_id)
        for _ in range(len(self.objects)):
            above = self.supported_by(current.id)
            if not above:
                return current
            current = above[0]
        raise WorldError(f"support cycle above {object_id}")

    def copy(self) -> "SceneState":
        return copy.deepcopy(self)

    def to_snapshot(self) -> Dict[str, Any]:
        return {
            "objects": [
                {
                    "id": obj.id,
                    "kind": obj.kind.value,
                    "color": obj.color,
                    "pose": obj.pose.to_list(),
                    "supported_by": obj.supported_by,
                }
                for obj in self.objects
            ],
            "held": self.held,
            "seed": self.seed,
        }

    @classmethod
    def from_snapshot(cls, data: Dict[str, Any], config: Optional[WorldConfig] = None) -> "SceneState":
        """Rebuild a scene from its JSON snapshot."""
        try:
            objects = [
                RigidObject(
                    id=item["id"],
                    kind=ObjectKind(item["kind"]),
                    color=item["color"],
                    pose=Vec3.from_seq(item["pose"]),
                    supported_by=item.get("supported_by", TABLE),
                )
                for item in data["objects"]
            ]
            seed = int(data.get("seed", 0))
        except (KeyError, TypeError, ValueError) as e:
            raise WorldError(f"malformed scene snapshot: {e}")

        scene_config = config or WorldConfig(seed=seed)
        scene = cls(objects, scene_config, seed, held=data.get("held"))
        problems = check_invariants(scene)
        if problems:
            raise WorldError(f"invalid scene snapshot: {problems[0]}")
        return scene

    def fingerprint(self) -> str:
        """Hash of the snapshot plus generator states."""
        payload = {
            "snapshot": self.to_snapshot(),
            "step_counter": self.step_counter,
            "rng": self.rng.bit_generator.state,
            "obs_rng": self.obs_rng.bit_generator.state,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def spawn_scene(config: WorldConfig, n_pairs: int, seed: int) -> SceneState:
    """Spawn n_pairs same-colored block/bowl pairs at well separated poses."""
    if not MIN_PAIRS <= n_pairs <= MAX_PAIRS:
        raise WorldError(f"n_pairs must lie in [{MIN_PAIRS}, {MAX_PAIRS}], got {n_pairs}")

    rng = np.random.default_rng(seed)
    color_indices = rng.choice(len(PALETTE), size=n_pairs, replace=False)
    colors = [PALETTE[int(i)] for i in color_indices]

    ws = config.workspace
    low = np.array([ws.x_min + SPAWN_MARGIN, ws.y_min + SPAWN_MARGIN])
    high = np.array([ws.x_max - SPAWN_MARGIN, ws.y_max - SPAWN_MARGIN])

    needed = 2 * n_pairs
    positions: List[np.ndarray] = []
    attempts = 0
    tries_for_current = 0
    while len(positions) < needed:
        if attempts >= MAX_SPAWN_ATTEMPTS:
            raise CrowdedWorkspaceError("workspace too crowded")
        attempts += 1
        tries_for_current += 1
        candidate = rng.uniform(low, high)
        if all(np.linalg.norm(candidate - p) >= config.spawn_min_separation for p in positions):
            positions.append(candidate)
            tries_for_current = 0
        elif tries_for_current >= MAX_PLACEMENT_TRIES:
            # jammed; start the layout over
            positions = []
            tries_for_current = 0

    objects = []
    for i, color in enumerate(colors):
        block_xy = positions[2 * i]
        bowl_xy = positions[2 * i + 1]
        objects.append(RigidObject(
            id=block_id(color), kind=ObjectKind.BLOCK, color=color,
            pose=Vec3(x=float(block_xy[0]), y=float(block_xy[1]), z=TABLE_BLOCK_Z)
        ))
        objects.append(RigidObject(
            id=bowl_id(color), kind=ObjectKind.BOWL, color=color,
            pose=Vec3(x=float(bowl_xy[0]), y=float(bowl_xy[1]), z=BOWL_REST_Z)
        ))

    logger.debug(f"Spawned {n_pairs} pairs ({', '.join(colors)}) with seed {seed} after {attempts} draws")
    return SceneState(objects, config, seed)


def observe(scene: SceneState, noise_sigma: float = 0.0) -> Observation:
    """Symbolic observation of every object, optionally with Gaussian pose noise."""
    entries = []
    for obj in scene.objects:
        pose = obj.pose
        if noise_sigma > 0:
            noise = scene.obs_rng.normal(0.0, noise_sigma, size=3)
            pose = Vec3(x=pose.x + float(noise[0]), y=pose.y + float(noise[1]), z=pose.z + float(noise[2]))
        entries.append(ObservedObject(id=obj.id, kind=obj.kind, color=obj.color, pose=pose))
    return Observation(objects=entries, timestamp=scene.step_counter)


def _bowl_occupied(scene: SceneState, bowl: RigidObject) -> bool:
    return bool(scene.supported_by(bowl.id))


def resolve_support(scene: SceneState, pose: Vec3) -> Tuple[str, Vec3]:
    """Support relation and settled pose for an object released at pose."""
    held = scene.get(scene.held) if scene.held else None
    if held is not None and held.kind == ObjectKind.BOWL:
        return TABLE, Vec3(x=pose.x, y=pose.y, z=BOWL_REST_Z)

    resting = scene.resting()
    bowls = [obj for obj in resting if obj.kind == ObjectKind.BOWL]
    in_reach = [
        bowl for bowl in bowls
        if horizontal_distance(bowl.pose, pose) <= BOWL_RADIUS and not _bowl_occupied(scene, bowl)
    ]
    if in_reach:
        bowl = min(in_reach, key=lambda b: (horizontal_distance(b.pose, pose), b.id))
        return bowl.id, Vec3(x=pose.x, y=pose.y, z=BOWL_INTERIOR_Z)

    blocks = [
        obj for obj in resting
        if obj.kind == ObjectKind.BLOCK
        and horizontal_distance(obj.pose, pose) <= scene.config.stability_offset
    ]
    if blocks:
        base = max(blocks, key=lambda b: (b.pose.z, b.id))
        return base.id, Vec3(x=pose.x, y=pose.y, z=base.pose.z + BLOCK_EDGE)

    return TABLE, Vec3(x=pose.x, y=pose.y, z=TABLE_BLOCK_Z)


def table_blocker(scene: SceneState, x: float, y: float, ignore: Optional[str] = None) -> Optional[str]:
    """First table-level object whose footprint a table landing at (x, y) would overlap."""
    for obj in scene.resting():
        if obj.id == ignore or obj.supported_by != TABLE:
            continue
        if math.hypot(obj.pose.x - x, obj.pose.y - y) < FOOTPRINT_CLEARANCE:
            return obj.id
    return None


def find_blocker(scene: SceneState, support: str, pose: Vec3, ignore: Optional[str] = None) -> Optional[str]:
    """Object that prevents settling at pose on support, if any."""
    if support == TABLE:
        return table_blocker(scene, pose.x, pose.y, ignore=ignore)
    above = [obj for obj in scene.supported_by(support) if obj.id != ignore]
    if above:
        return above[0].id
    return None


def _nearest_clear_point(scene: SceneState, x: float, y: float) -> Tuple[float, float]:
    ws = scene.config.workspace
    xs = np.arange(ws.x_min, ws.x_max + 1e-9, GRID_STEP)
    ys = np.arange(ws.y_min, ws.y_max + 1e-9, GRID_STEP)
    gx, gy = np.meshgrid(xs, ys)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)

    clear = np.ones(len(points), dtype=bool)
    for obj in scene.resting():
        if obj.supported_by != TABLE:
            continue
        gaps = np.linalg.norm(points - np.array([obj.pose.x, obj.pose.y]), axis=1)
        clear &= gaps >= FOOTPRINT_CLEARANCE
    if not clear.any():
        raise WorldError("no clear landing point left on the table")

    candidates = points[clear]
    best = int(np.argmin(np.linalg.norm(candidates - np.array([x, y]), axis=1)))
    return float(candidates[best][0]), float(candidates[best][1])


def _scatter_landing(scene: SceneState, target: Vec3) -> Tuple[float, float]:
    ws = scene.config.workspace
    sigma = scene.config.failure.drop_scatter_sigma
    for _ in range(MAX_SCATTER_ATTEMPTS):
        dx, dy = scene.rng.normal(0.0, sigma, size=2)
        x, y = ws.clip(target.x + float(dx), target.y + float(dy))
        if table_blocker(scene, x, y) is None:
            return x, y
    return _nearest_clear_point(scene, target.x, target.y)


def step_pick(scene: SceneState, object_id: str) -> ExecutionOutcome:
    """Grasp an object and detach it from its support."""
    if scene.held is not None:
        raise WorldError(f"already holding {scene.held}")
    obj = scene.get(object_id)
    above = scene.supported_by(object_id)
    if above:
        raise WorldError(f"object buried: {object_id} is under {above[0].id}")

    obj.supported_by = TABLE
    scene.held = object_id
    scene.step_counter += 1
    return ExecutionOutcome(primitive="pick", success=True, moved_object=object_id)


def step_place(scene: SceneState, target: Vec3) -> ExecutionOutcome:
    """Release the held object at target, subject to injected drops."""
    if scene.held is None:
        raise WorldError("nothing held")
    ws = scene.config.workspace
    if not ws.contains(target.x, target.y):
        raise WorldError(f"target out of workspace: {target.fmt()}")

    obj = scene.get(scene.held)
    support, settled = resolve_support(scene, target)
    blocker = find_blocker(scene, support, settled, ignore=obj.id)
    if blocker is not None:
        raise WorldError(f"target blocked by {blocker}")

    dropped = False
    if scene.rng.random() < scene.config.failure.drop_probability:
        x, y = _scatter_landing(scene, target)
        rest_z = BOWL_REST_Z if obj.kind == ObjectKind.BOWL else TABLE_BLOCK_Z
        support, achieved = TABLE, Vec3(x=x, y=y, z=rest_z)
        dropped = True
        logger.debug(f"Dropped {obj.id}: intended {settled.fmt()}, landed {achieved.fmt()}")
    else:
        achieved = settled

    obj.pose = achieved
    obj.supported_by = support
    scene.held = None
    scene.step_counter += 1
    return ExecutionOutcome(
        primitive="place", success=True, moved_object=obj.id,
        intended=settled, achieved=achieved, support=support, dropped=dropped
    )


def check_invariants(scene: SceneState) -> List[str]:
    """Return a description of every violated scene invariant."""
    problems = []
    ids = scene.ids
    if len(set(ids)) != len(ids):
        problems.append("duplicate object ids")

    for obj in scene.objects:
        hops = 0
        current = obj
        while current.supported_by != TABLE:
            hops += 1
            if hops > len(scene.objects) or not scene.has(current.supported_by):
                problems.append(f"support chain of {obj.id} does not reach the table")
                break
            current = scene.get(current.supported_by)
        if not scene.config.workspace.contains(obj.pose.x, obj.pose.y):
            problems.append(f"{obj.id} outside workspace")

    if scene.held is not None:
        if not scene.has(scene.held):
            problems.append(f"held object {scene.held} missing")
        elif any(o.supported_by == scene.held for o in scene.objects):
            problems.append(f"held object {scene.held} supports another object")

    roots = [o for o in scene.resting() if o.supported_by == TABLE]
    for i, a in enumerate(roots):
        for b in roots[i + 1:]:
            if horizontal_distance(a.pose, b.pose) < FOOTPRINT_CLEARANCE - 1e-9:
                problems.append(f"footprints of {a.id} and {b.id} overlap")
    return problems
