"""Tests for grounding free-form instructions."""
import pytest

from src.core.instructions import (
    InstructionParseError, build_adhoc_task, estimate_difficulty, ground_instruction, split_clauses
)
from src.core.models import Feasibility
from src.core.world import BOWL_INTERIOR_Z, TABLE_BLOCK_Z, SceneState
from tests.conftest import bowl


def test_split_clauses():
    clauses = split_clauses("First put the red block in the red bowl, then put the blue block on it.")
    assert clauses == ["put the red block in the red bowl", "put the blue block on it"]


class TestGrounding:
    """Goal poses on the two-pair scene."""

    def test_block_into_bowl(self, two_pair_scene):
        goal = ground_instruction("Put the red block in the red bowl.", two_pair_scene)
        target = goal.targets["blk_red"]
        assert (target.x, target.y, target.z) == (0.15, 0.15, BOWL_INTERIOR_Z)
        assert goal.bowl_targets == {"blk_red": "bowl_red"}
        assert goal.referenced == ["blk_red", "bowl_red"]

    def test_synonyms(self, two_pair_scene):
        goal = ground_instruction("Place the red cube into the blue dish", two_pair_scene)
        assert goal.bowl_targets == {"blk_red": "bowl_blue"}

    def test_on_it_follows_previous_move(self, two_pair_scene):
        goal = ground_instruction(
            "Put the red block into the blue bowl, then put the blue block on it.", two_pair_scene
        )
        top = goal.targets["blk_blue"]
        assert (top.x, top.y) == (-0.15, 0.15)
        assert top.z == pytest.approx(BOWL_INTERIOR_Z + 0.05)

    def test_to_point(self, two_pair_scene):
        goal = ground_instruction("Move the blue block to (0.1, -0.05).", two_pair_scene)
        target = goal.targets["blk_blue"]
        assert (target.x, target.y, target.z) == (0.1, -0.05, TABLE_BLOCK_Z)

    def test_same_color(self, two_pair_scene):
        goal = ground_instruction("Put every block into the bowl of the same color.", two_pair_scene)
        assert goal.bowl_targets == {"blk_red": "bowl_red", "blk_blue": "bowl_blue"}

    def test_tower(self, two_pair_scene):
        goal = ground_instruction("Build a tower: blue, red from bottom to top.", two_pair_scene)
        base, top = goal.targets["blk_blue"], goal.targets["blk_red"]
        assert (base.x, base.y) == (top.x, top.y) == (0.15, -0.15)
        assert top.z == pytest.approx(0.075)

    def test_closest_block(self, two_pair_scene):
        goal = ground_instruction("Put the block closest to the blue bowl into it.", two_pair_scene)
        assert goal.bowl_targets == {"blk_red": "bowl_blue"}

    def test_closest_block_without_blocks(self, world_config):
        scene = SceneState([bowl("red", 0.15, 0.15), bowl("blue", -0.15, 0.15)], world_config, world_config.seed)
        goal = ground_instruction("Put the block closest to the blue bowl into the red bowl.", scene)
        assert goal.targets == {}
        assert goal.referenced == ["bowl_blue", "bowl_red"]

    def test_unknown_phrasing(self, two_pair_scene):
        with pytest.raises(InstructionParseError):
            ground_instruction("Dance around the table.", two_pair_scene)


class TestAdhocTask:
    """Single-trial task construction."""

    def test_missing_color_is_infeasible(self, two_pair_scene):
        task = build_adhoc_task("Put the green block in the red bowl.", two_pair_scene)
        assert task.feasibility_label == Feasibility.INFEASIBLE
        assert "blk_green" in task.goal.referenced
        assert task.goal.targets == {}

    def test_feasible_task(self, two_pair_scene):
        task = build_adhoc_task("Put the red block in the red bowl.", two_pair_scene)
        assert task.task_id == "adhoc"
        assert task.feasibility_label == Feasibility.FEASIBLE
        assert task.n_pairs == 2
        assert task.scenario_seed == two_pair_scene.seed


@pytest.mark.parametrize("text, difficulty", [
    ("Put the red block in the red bowl.", 1.0),
    ("Put the red block in the red bowl, then put the blue block in the blue bowl.", 1.5),
    ("Build a tower: blue, red from bottom to top.", 2.5),
    ("Put the block closest to the blue bowl into it.", 3.5),
])
def test_estimate_difficulty(text, difficulty):
    assert estimate_difficulty(text) == pytest.approx(difficulty)
