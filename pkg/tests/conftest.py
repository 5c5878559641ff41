"""Shared fixtures for the tabletop agent tests."""
from pathlib import Path

import pytest

from config.bench_config import PROMPTS_DIR
from src.core.models import TABLE, FailureProfile, ObjectKind, RigidObject, Vec3, WorldConfig
from src.core.prompts import PromptLibrary
from src.core.world import BOWL_REST_Z, TABLE_BLOCK_Z, SceneState, spawn_scene


def block(color: str, x: float, y: float, z: float = TABLE_BLOCK_Z, supported_by: str = TABLE) -> RigidObject:
    return RigidObject(id=f"blk_{color}", kind=ObjectKind.BLOCK, color=color,
                       pose=Vec3(x=x, y=y, z=z), supported_by=supported_by)


def bowl(color: str, x: float, y: float) -> RigidObject:
    return RigidObject(id=f"bowl_{color}", kind=ObjectKind.BOWL, color=color,
                       pose=Vec3(x=x, y=y, z=BOWL_REST_Z))


@pytest.fixture
def seed():
    return 1337


@pytest.fixture
def world_config(seed):
    return WorldConfig(seed=seed)


@pytest.fixture
def dropping_world(seed):
    return WorldConfig(seed=seed, failure=FailureProfile(drop_probability=1.0))


@pytest.fixture
def spawned_scene(world_config, seed):
    return spawn_scene(world_config, 3, seed)


@pytest.fixture
def two_pair_scene(world_config):
    """Red and blue pairs at fixed, well separated poses."""
    objects = [
        block("red", -0.15, -0.15),
        bowl("red", 0.15, 0.15),
        block("blue", 0.15, -0.15),
        bowl("blue", -0.15, 0.15),
    ]
    return SceneState(objects, world_config, world_config.seed)


@pytest.fixture
def prompts():
    return PromptLibrary(PROMPTS_DIR)


@pytest.fixture(autouse=True)
def repo_root(monkeypatch):
    """Relative paths (prompts, log file) resolve against the project root."""
    monkeypatch.chdir(Path(__file__).resolve().parent.parent)
