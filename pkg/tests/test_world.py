"""Tests for the kinematic tabletop simulator."""
import math

import numpy as np
import pytest

from src.core.models import TABLE, FailureProfile, ObjectKind, Vec3, WorldConfig
from src.core.primitives import execute_call, make_call
from src.core.world import (
    BOWL_INTERIOR_Z, SPAWN_MARGIN, TABLE_BLOCK_Z, SceneState, WorldError,
    check_invariants, distance, observe, resolve_support, spawn_scene, step_pick, step_place
)
from tests.conftest import block, bowl


def centered_scene(config: WorldConfig) -> SceneState:
    objects = [
        block("red", 0.0, 0.0),
        bowl("red", 0.15, 0.15),
        block("blue", -0.15, -0.15),
        bowl("blue", 0.15, -0.15),
    ]
    return SceneState(objects, config, config.seed)


class TestSpawn:
    """Seeded scene generation."""

    def test_same_seed_same_scene(self, world_config):
        a = spawn_scene(world_config, 3, 99)
        b = spawn_scene(world_config, 3, 99)
        assert a.to_snapshot() == b.to_snapshot()

    def test_different_seed_different_scene(self, world_config):
        a = spawn_scene(world_config, 3, 99)
        b = spawn_scene(world_config, 3, 100)
        assert a.to_snapshot() != b.to_snapshot()

    def test_pairs_share_colors(self, spawned_scene):
        blocks = {o.color for o in spawned_scene.objects if o.kind == ObjectKind.BLOCK}
        bowls = {o.color for o in spawned_scene.objects if o.kind == ObjectKind.BOWL}
        assert len(spawned_scene.objects) == 6
        assert blocks == bowls
        assert len(blocks) == 3

    def test_spawn_respects_separation_and_margin(self, world_config):
        for seed in range(20):
            scene = spawn_scene(world_config, 4, seed)
            assert check_invariants(scene) == []
            for i, a in enumerate(scene.objects):
                assert abs(a.pose.x) <= 0.25 - SPAWN_MARGIN + 1e-9
                assert abs(a.pose.y) <= 0.25 - SPAWN_MARGIN + 1e-9
                assert a.supported_by == TABLE
                for b in scene.objects[i + 1:]:
                    assert math.hypot(a.pose.x - b.pose.x, a.pose.y - b.pose.y) >= 0.12

    @pytest.mark.parametrize("n_pairs", [1, 5])
    def test_pair_count_out_of_range(self, world_config, n_pairs):
        with pytest.raises(WorldError):
            spawn_scene(world_config, n_pairs, 1)


class TestSupport:
    """Support resolution and the stacking threshold."""

    def test_bowl_center_is_contained(self, two_pair_scene):
        support, settled = resolve_support(two_pair_scene, Vec3(x=0.15, y=0.15, z=0.2))
        assert support == "bowl_red"
        assert settled.z == pytest.approx(BOWL_INTERIOR_Z)

    def test_offset_at_threshold_stacks(self, world_config):
        scene = centered_scene(world_config)
        support, settled = resolve_support(scene, Vec3(x=0.015, y=0.0, z=0.1))
        assert support == "blk_red"
        assert settled.z == pytest.approx(TABLE_BLOCK_Z + 0.05)

    def test_offset_beyond_threshold_lands_on_table(self, world_config):
        scene = centered_scene(world_config)
        support, settled = resolve_support(scene, Vec3(x=0.0151, y=0.0, z=0.1))
        assert support == TABLE
        assert settled.z == pytest.approx(TABLE_BLOCK_Z)

    def test_far_point_is_table(self, two_pair_scene):
        support, settled = resolve_support(two_pair_scene, Vec3(x=0.0, y=0.0))
        assert support == TABLE
        assert settled.z == pytest.approx(TABLE_BLOCK_Z)


class TestPickPlace:
    """Grasp and release steps."""

    def test_place_on_block_with_small_offset(self, world_config):
        scene = centered_scene(world_config)
        step_pick(scene, "blk_blue")
        outcome = step_place(scene, Vec3(x=0.010, y=0.0, z=0.075))
        assert outcome.support == "blk_red"
        assert scene.get("blk_blue").supported_by == "blk_red"
        assert outcome.achieved.z == pytest.approx(0.075)
        assert scene.held is None

    def test_place_into_bowl(self, two_pair_scene):
        step_pick(two_pair_scene, "blk_red")
        outcome = step_place(two_pair_scene, Vec3(x=0.15, y=0.15, z=BOWL_INTERIOR_Z))
        assert outcome.support == "bowl_red"
        assert outcome.achieved == Vec3(x=0.15, y=0.15, z=BOWL_INTERIOR_Z)
        assert not outcome.dropped

    def test_place_without_held_object(self, two_pair_scene):
        with pytest.raises(WorldError, match="nothing held"):
            step_place(two_pair_scene, Vec3(x=0.0, y=0.0))

    def test_place_out_of_workspace(self, two_pair_scene):
        step_pick(two_pair_scene, "blk_red")
        with pytest.raises(WorldError, match="target out of workspace"):
            step_place(two_pair_scene, Vec3(x=0.4, y=0.0))

    def test_pick_while_holding(self, two_pair_scene):
        step_pick(two_pair_scene, "blk_red")
        with pytest.raises(WorldError, match="already holding"):
            step_pick(two_pair_scene, "blk_blue")

    def test_pick_buried_object(self, world_config):
        scene = centered_scene(world_config)
        step_pick(scene, "blk_blue")
        step_place(scene, Vec3(x=0.0, y=0.0, z=0.075))
        with pytest.raises(WorldError, match="object buried"):
            step_pick(scene, "blk_red")

    def test_table_landing_too_close_is_blocked(self, two_pair_scene):
        step_pick(two_pair_scene, "blk_red")
        with pytest.raises(WorldError, match="target blocked by blk_blue"):
            step_place(two_pair_scene, Vec3(x=0.10, y=-0.15))

    def test_drop_is_reproducible(self, dropping_world):
        outcomes = []
        for _ in range(2):
            scene = SceneState(
                [block("red", -0.15, -0.15), bowl("red", 0.15, 0.15),
                 block("blue", 0.15, -0.15), bowl("blue", -0.15, 0.15)],
                dropping_world, dropping_world.seed
            )
            step_pick(scene, "blk_red")
            outcomes.append(step_place(scene, Vec3(x=0.15, y=0.15, z=BOWL_INTERIOR_Z)))
        first, second = outcomes
        assert first.dropped and second.dropped
        assert first.support == TABLE
        assert first.achieved == second.achieved
        assert distance(first.achieved, first.intended) > 0.0


class TestSnapshot:
    """Scene snapshots and invariant checks."""

    def test_snapshot_round_trip(self, spawned_scene, world_config):
        restored = SceneState.from_snapshot(spawned_scene.to_snapshot(), world_config)
        assert restored.to_snapshot() == spawned_scene.to_snapshot()

    def test_malformed_snapshot(self):
        with pytest.raises(WorldError, match="malformed scene snapshot"):
            SceneState.from_snapshot({"objects": [{"id": "blk_red"}]})

    def test_snapshot_with_cycle_is_rejected(self):
        data = {
            "objects": [
                {"id": "blk_red", "kind": "block", "color": "red", "pose": [0, 0, 0.075], "supported_by": "blk_blue"},
                {"id": "blk_blue", "kind": "block", "color": "blue", "pose": [0, 0, 0.025], "supported_by": "blk_red"},
            ],
            "held": None,
            "seed": 3,
        }
        with pytest.raises(WorldError, match="invalid scene snapshot"):
            SceneState.from_snapshot(data)

    def test_overlap_is_reported(self, world_config):
        scene = SceneState([block("red", 0.0, 0.0), block("blue", 0.03, 0.0)], world_config, 0)
        assert any("overlap" in problem for problem in check_invariants(scene))


class TestObservation:
    def test_noise_free_observation_matches_scene(self, spawned_scene):
        observation = observe(spawned_scene)
        assert [o.id for o in observation.objects] == spawned_scene.ids
        assert all(o.pose == spawned_scene.get(o.id).pose for o in observation.objects)

    def test_noise_does_not_shift_execution_randomness(self, seed):
        config = WorldConfig(seed=seed, failure=FailureProfile(drop_probability=0.5))
        quiet = spawn_scene(config, 3, seed)
        noisy = spawn_scene(config, 3, seed)
        observe(noisy, noise_sigma=0.01)
        assert quiet.rng.random() == noisy.rng.random()


@pytest.mark.bench
def test_random_sequences_preserve_invariants(world_config):
    """10,000 random primitive sequences keep count, acyclicity and the stacking boundary."""
    rng = np.random.default_rng(2024)
    config = WorldConfig(seed=0, failure=FailureProfile(drop_probability=0.2))
    for sequence in range(10_000):
        scene = spawn_scene(config, int(rng.integers(2, 5)), sequence)
        count = len(scene.objects)
        for _ in range(3):
            obj = scene.objects[int(rng.integers(len(scene.objects)))]
            if rng.random() < 0.5:
                other = scene.objects[int(rng.integers(len(scene.objects)))]
                call = make_call("pick_place_on", object=obj.id, base=other.id)
            else:
                call = make_call("pick_place_at", object=obj.id,
                                 position=[float(v) for v in rng.uniform(-0.3, 0.3, size=2)])
            execute_call(call, scene)
            assert len(scene.objects) == count
            assert scene.held is None
            assert check_invariants(scene) == []
            for item in scene.objects:
                if item.supported_by != TABLE and scene.get(item.supported_by).kind == ObjectKind.BLOCK:
                    below = scene.get(item.supported_by)
                    gap = math.hypot(item.pose.x - below.pose.x, item.pose.y - below.pose.y)
                    assert gap <= config.stability_offset
