"""
Grounding of free-form instructions for single ad-hoc trials.

Recognizes the phrasings used by the benchmark catalog: into a bowl, onto a
block, to coordinates, matching colors, towers in a named order and the block
closest to a bowl. Objects named but absent from the scene are kept in the
referenced list so the goal becomes infeasible.
"""
import logging
import re
from typing import List, Optional

from .models import Feasibility, GoalSpec, ObjectKind, TaskInstance, Vec3
from .world import (
    BLOCK_EDGE, BOWL_INTERIOR_Z, TABLE_BLOCK_Z, SceneState, block_id, bowl_id, horizontal_distance
)

logger = logging.getLogger(__name__)

CLAUSE_SPLIT = re.compile(r";|\.\s+|\.$|,?\s*\b(?:and\s+)?then\b\s*|,?\s*\b(?:and\s+)?finally\b\s*|\bfirst\b\s*")
SYNONYMS = [(re.compile(r"\bcubes?\b"), lambda m: m.group(0).replace("cube", "block")),
            (re.compile(r"\bdish(es)?\b"), lambda m: "bowls" if m.group(1) else "bowl")]

NUMBER = r"(-?\d*\.?\d+)"
TOWER = re.compile(
    r"(?:stack all blocks|build a tower)(?:[^:]*?\bon the (\w+) block|[^:]*?\binside the (\w+) bowl)?[^:]*:"
    r"\s*(.+?)\s+from bottom to top"
)
SAME_COLOR = re.compile(r"\b(?:every|each|all)\b.*\bblocks?\b.*\b(?:same colou?r|matching colou?rs?|shares its colou?r)")
CLOSEST = re.compile(r"\bthe block (?:that is )?closest to the (\w+) bowl (?:in|into|inside) (?:that bowl|it|the (\w+) bowl)")
TO_POINT = re.compile(rf"\bthe (\w+) block to \(?\s*{NUMBER}\s*,\s*{NUMBER}\s*\)?")
ON_IT = re.compile(r"\bthe (\w+) block on (?:top of )?it\b")
ONTO = re.compile(r"\bthe (\w+) block on (?:top of )?the (\w+) block")
INTO = re.compile(r"\bthe (\w+) block (?:in|into|inside) the (\w+) bowl")

REASONING_WORDS = re.compile(r"\b(closest|nearest|farthest|midpoint|between|if|otherwise|left of|right of)\b")
STACKING_WORDS = re.compile(r"\b(stack|tower|on top of)\b")


class InstructionParseError(Exception):
    """No clause of the instruction could be grounded."""
    pass


def _normalize(text: str) -> str:
    text = text.lower().strip()
    for pattern, repl in SYNONYMS:
        text = pattern.sub(repl, text)
    return text


def split_clauses(text: str) -> List[str]:
    return [clause.strip(" ,") for clause in CLAUSE_SPLIT.split(_normalize(text)) if clause and clause.strip(" ,")]


def _colors(listing: str) -> List[str]:
    return [c for c in re.split(r",\s*|\s+and\s+|\s+", listing) if c]


class _Grounder:
    """Accumulates final target poses clause by clause."""

    def __init__(self, scene: SceneState):
        self.scene = scene
        self.goal = GoalSpec()
        self.last_moved: Optional[str] = None

    def _ref(self, object_id: str) -> bool:
        """Record a reference; False when the object is absent."""
        if object_id not in self.goal.referenced:
            self.goal.referenced.append(object_id)
        return self.scene.has(object_id)

    def pose_of(self, object_id: str) -> Vec3:
        if object_id in self.goal.targets:
            return self.goal.targets[object_id]
        pose = self.scene.get(object_id).pose
        return Vec3(x=round(pose.x, 3), y=round(pose.y, 3), z=round(pose.z, 3))

    def into(self, block: str, bowl: str):
        present = self._ref(block) & self._ref(bowl)
        self.last_moved = block
        if not present:
            return
        center = self.scene.get(bowl).pose
        self.goal.targets[block] = Vec3(x=round(center.x, 3), y=round(center.y, 3), z=BOWL_INTERIOR_Z)
        self.goal.bowl_targets[block] = bowl

    def onto(self, block: str, base: str):
        present = self._ref(block) & self._ref(base)
        self.last_moved = block
        if not present:
            return
        below = self.pose_of(base)
        self.goal.targets.setdefault(base, below)
        self.goal.targets[block] = Vec3(x=below.x, y=below.y, z=round(below.z + BLOCK_EDGE, 3))
        self.goal.bowl_targets.pop(block, None)

    def to_point(self, block: str, x: float, y: float):
        self.last_moved = block
        if self._ref(block):
            self.goal.targets[block] = Vec3(x=x, y=y, z=TABLE_BLOCK_Z)
            self.goal.bowl_targets.pop(block, None)

    def clause(self, text: str) -> bool:
        """Ground one clause; False when no phrasing matches."""
        match = TOWER.search(text)
        if match:
            order = [block_id(c) for c in _colors(match.group(3))]
            if match.group(2):
                self.into(order[0], bowl_id(match.group(2)))
            elif self._ref(order[0]):
                self.goal.targets.setdefault(order[0], self.pose_of(order[0]))
            for lower, upper in zip(order, order[1:]):
                self.onto(upper, lower)
            return True

        if SAME_COLOR.search(text):
            for obj in self.scene.objects:
                if obj.kind == ObjectKind.BLOCK:
                    self.into(obj.id, bowl_id(obj.color))
            return True

        match = CLOSEST.search(text)
        if match:
            anchor = bowl_id(match.group(1))
            target_bowl = bowl_id(match.group(2)) if match.group(2) else anchor
            if not self._ref(anchor):
                return True
            blocks = [o for o in self.scene.objects if o.kind == ObjectKind.BLOCK]
            if not blocks:
                self._ref(target_bowl)
                return True
            closest = min(blocks, key=lambda b: (horizontal_distance(b.pose, self.scene.get(anchor).pose), b.id))
            self.into(closest.id, target_bowl)
            return True

        match = TO_POINT.search(text)
        if match:
            self.to_point(block_id(match.group(1)), float(match.group(2)), float(match.group(3)))
            return True

        matched = False
        for match in INTO.finditer(text):
            self.into(block_id(match.group(1)), bowl_id(match.group(2)))
            matched = True
            on_it = ON_IT.search(text, match.end())
            if on_it:
                self.onto(block_id(on_it.group(1)), self.last_moved)
        if not matched:
            match = ON_IT.search(text)
            if match and self.last_moved:
                self.onto(block_id(match.group(1)), self.last_moved)
                return True
        for match in ONTO.finditer(text):
            self.onto(block_id(match.group(1)), block_id(match.group(2)))
            matched = True
        return matched


def ground_instruction(text: str, scene: SceneState) -> GoalSpec:
    """GoalSpec for text on scene; raises InstructionParseError when nothing matches."""
    grounder = _Grounder(scene)
    grounded = 0
    for clause in split_clauses(text):
        if grounder.clause(clause):
            grounded += 1
        else:
            logger.debug(f"Ignoring clause without a known phrasing: {clause!r}")
    if grounded == 0:
        raise InstructionParseError(f"cannot ground instruction: {text!r}")
    return grounder.goal


def estimate_difficulty(text: str) -> float:
    """Rough 1-5 score from clause count and reasoning keywords."""
    normalized = _normalize(text)
    score = 1.0 + 0.5 * (len(split_clauses(text)) - 1)
    if REASONING_WORDS.search(normalized):
        score += 2.5
    if STACKING_WORDS.search(normalized):
        score += 1.5
    return min(5.0, max(1.0, score))


def build_adhoc_task(text: str, scene: SceneState) -> TaskInstance:
    """Task instance for a single solve run on scene."""
    goal = ground_instruction(text, scene)
    missing = [object_id for object_id in goal.referenced if not scene.has(object_id)]
    difficulty = estimate_difficulty(text)
    n_pairs = sum(1 for o in scene.objects if o.kind == ObjectKind.BLOCK)
    return TaskInstance(
        task_id="adhoc",
        instruction=text,
        goal=goal,
        feasibility_label=Feasibility.INFEASIBLE if missing else Feasibility.FEASIBLE,
        failure=scene.config.failure,
        labeled_difficulty=difficulty,
        difficulty=difficulty,
        n_pairs=n_pairs,
        scenario_seed=scene.seed
    )
