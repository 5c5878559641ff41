"""
Prompt templates and the textual observation table.
"""
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from .models import ObjectKind, Observation, ObservedObject, Vec3

logger = logging.getLogger(__name__)

MODE_SELECTOR = "mode_selector"
COT_REASONING = "cot_reasoning"
ACTION_GENERATION = "action_generation"
TEMPLATE_NAMES = [MODE_SELECTOR, COT_REASONING, ACTION_GENERATION]

USER_SEPARATOR = "---USER---"
PLACEHOLDER = re.compile(r"\{(instruction|observation_table|primitive_docs|rationale)\}")
TABLE_HEADER = "id | kind | color | x | y | z"


@dataclass
class BasePrompt:
    """System and user messages that open every rendered context."""
    system: str
    user: str


class PromptLibrary:
    """Loads plain-text templates with named placeholders."""

    def __init__(self, prompts_dir: str):
        self.prompts_dir = Path(prompts_dir)
        self.templates: Dict[str, str] = {}
        self.load_templates()

    def load_templates(self):
        for name in TEMPLATE_NAMES:
            path = self.prompts_dir / f"{name}.txt"
            if not path.exists():
                raise FileNotFoundError(f"Prompt template not found: {path}")
            text = path.read_text(encoding='utf-8')
            if USER_SEPARATOR not in text:
                raise ValueError(f"Prompt template {path} lacks the {USER_SEPARATOR} line")
            self.templates[name] = text
        logger.debug(f"Loaded {len(self.templates)} prompt templates from {self.prompts_dir}")

    def render(self, name: str, **values: str) -> BasePrompt:
        """Fill placeholders; unknown placeholders render empty."""
        text = PLACEHOLDER.sub(lambda m: values.get(m.group(1), ""), self.templates[name])
        system, user = text.split(USER_SEPARATOR, 1)
        return BasePrompt(system=system.strip(), user=user.strip())


def render_observation_table(observation: Observation) -> str:
    lines = [TABLE_HEADER]
    for obj in observation.objects:
        lines.append(
            f"{obj.id} | {obj.kind.value} | {obj.color} | "
            f"{obj.pose.x:.3f} | {obj.pose.y:.3f} | {obj.pose.z:.3f}"
        )
    return "\n".join(lines)


def _parse_row(line: str) -> Optional[ObservedObject]:
    cells = [cell.strip() for cell in line.split("|")]
    if len(cells) != 6 or cells[1] not in (ObjectKind.BLOCK.value, ObjectKind.BOWL.value):
        return None
    try:
        pose = Vec3(x=float(cells[3]), y=float(cells[4]), z=float(cells[5]))
    except ValueError:
        return None
    return ObservedObject(id=cells[0], kind=ObjectKind(cells[1]), color=cells[2], pose=pose)


def parse_observation_table(text: str) -> Optional[Observation]:
    """Last observation table found in text, if any."""
    blocks = text.split(TABLE_HEADER)
    if len(blocks) < 2:
        return None
    objects: List[ObservedObject] = []
    for line in blocks[-1].strip().splitlines():
        row = _parse_row(line)
        if row is None:
            break
        objects.append(row)
    return Observation(objects=objects)
