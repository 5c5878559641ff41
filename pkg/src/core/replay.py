"""
Deterministic re-simulation of recorded trials.
"""
import logging
import math
from typing import Any, Dict, List, Optional

from .models import Evaluation, TrialRecord, Vec3
from .primitives import execute_call
from .world import SceneState

logger = logging.getLogger(__name__)

POSE_TOLERANCE = 1e-9


class ReplayDivergence(Exception):
    """Re-simulation disagrees with the recorded trace."""

    def __init__(self, step: Optional[int], message: str):
        self.step = step
        where = "final scene" if step is None else f"step {step}"
        super().__init__(f"{where}: {message}")


def _same_pose(a: Optional[Vec3], b: Optional[Vec3]) -> bool:
    if a is None or b is None:
        return a is b
    return all(math.isclose(p, q, abs_tol=POSE_TOLERANCE) for p, q in zip(a.to_list(), b.to_list()))


def _fmt(pose: Optional[Vec3]) -> str:
    return pose.fmt() if pose is not None else "nothing"


def _compare_snapshots(replayed: Dict[str, Any], recorded: Dict[str, Any]):
    if replayed.get("held") != recorded.get("held"):
        raise ReplayDivergence(None, f"held object {replayed.get('held')} vs {recorded.get('held')}")
    recorded_objects = {obj["id"]: obj for obj in recorded.get("objects", [])}
    for obj in replayed["objects"]:
        other = recorded_objects.pop(obj["id"], None)
        if other is None:
            raise ReplayDivergence(None, f"{obj['id']} missing from the recorded scene")
        if obj["supported_by"] != other["supported_by"]:
            raise ReplayDivergence(None, f"{obj['id']} rests on {obj['supported_by']}, recorded {other['supported_by']}")
        if not _same_pose(Vec3.from_seq(obj["pose"]), Vec3.from_seq(other["pose"])):
            raise ReplayDivergence(None, f"{obj['id']} at {obj['pose']}, recorded {other['pose']}")
    if recorded_objects:
        raise ReplayDivergence(None, f"recorded scene has extra objects {sorted(recorded_objects)}")


def replay_record(record: TrialRecord) -> int:
    """Re-execute every executed call of record; returns how many were replayed."""
    if record.evaluation == Evaluation.SKIPPED or not record.initial_scene:
        logger.info(f"Nothing to replay for {record.task_id} (no executed trial)")
        return 0

    scene = SceneState.from_snapshot(record.initial_scene, record.world)
    replayed = 0
    for step in record.steps:
        if not step.executed:
            continue
        outcome = execute_call(step.call, scene)
        recorded = step.outcome
        if outcome.success != recorded.success:
            detail = outcome.error if not outcome.success else "call succeeded"
            raise ReplayDivergence(step.index, f"{step.call.primitive} success {outcome.success} ({detail})")
        if outcome.dropped != recorded.dropped:
            raise ReplayDivergence(step.index, f"drop event {outcome.dropped}, recorded {recorded.dropped}")
        if not _same_pose(outcome.achieved, recorded.achieved):
            raise ReplayDivergence(
                step.index, f"achieved {_fmt(outcome.achieved)}, recorded {_fmt(recorded.achieved)}"
            )
        replayed += 1

    _compare_snapshots(scene.to_snapshot(), record.final_scene)
    return replayed


def replay_records(records: List[TrialRecord]) -> int:
    """Replay records in order, stopping at the first divergence."""
    total = 0
    for position, record in enumerate(records):
        try:
            total += replay_record(record)
        except ReplayDivergence as e:
            logger.error(f"❌ Trial {position} ({record.task_id}) diverged at {e}")
            raise
    return total
