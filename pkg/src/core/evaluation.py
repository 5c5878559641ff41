"""
Goal and feasibility evaluation of finished trials.
"""
import logging

from config.bench_config import SUCCESS_DELTA
from .models import (
    Evaluation, EvaluationResult, Feasibility, GoalSpec, TrialStatus
)
from .world import BOWL_RADIUS, DISTANCE_SLACK, SceneState, distance, horizontal_distance

logger = logging.getLogger(__name__)


class EvaluationError(Exception):
    """Goal references an object the scene does not contain."""
    pass


def evaluate(scene: SceneState, goal: GoalSpec, delta: float = SUCCESS_DELTA) -> EvaluationResult:
    """Pass iff every constrained object lies within delta of its goal pose."""
    distances = {}
    for object_id, target in sorted(goal.targets.items()):
        if not scene.has(object_id):
            raise EvaluationError(f"unknown goal object {object_id}")
        distances[object_id] = distance(scene.get(object_id).pose, target)

    contained = {}
    for object_id, bowl in sorted(goal.bowl_targets.items()):
        for ref in (object_id, bowl):
            if not scene.has(ref):
                raise EvaluationError(f"unknown goal object {ref}")
        obj = scene.get(object_id)
        contained[object_id] = (
            obj.supported_by == bowl
            or horizontal_distance(obj.pose, scene.get(bowl).pose) <= BOWL_RADIUS
        )

    passed = all(gap <= delta + DISTANCE_SLACK for gap in distances.values())
    return EvaluationResult(
        verdict=Evaluation.PASS if passed else Evaluation.FAIL,
        distances=distances,
        contained=contained
    )


def evaluate_feasibility(predicted: TrialStatus, label: Feasibility) -> Evaluation:
    """Infeasible-labeled tasks pass only on an infeasible prediction."""
    if label == Feasibility.INFEASIBLE:
        return Evaluation.PASS if predicted == TrialStatus.INFEASIBLE else Evaluation.FAIL
    return Evaluation.PASS if predicted != TrialStatus.INFEASIBLE else Evaluation.FAIL
