"""
Data models for the tabletop manipulation agent and its benchmark.
"""
import math
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from config.bench_config import INVOCATION_BUDGET, MAX_PAIRS, MIN_PAIRS, MONITOR_THRESHOLD, SLOW_THRESHOLD

TABLE = "table"


class ObjectKind(str, Enum):
    """Kinds of rigid objects on the tabletop."""
    BLOCK = "block"
    BOWL = "bowl"


class PrimitiveCategory(str, Enum):
    """Primitive taxonomy."""
    PERCEPTION = "perception"
    EXECUTION = "execution"
    CONTROL = "control"


class ArgType(str, Enum):
    """Semantic argument types of primitive parameters."""
    OBJECT_REF = "object_ref"
    POSITION = "position"
    STATUS = "status"
    TEXT = "text"


class TrialStatus(str, Enum):
    """Status a reasoner reports when it finishes a task."""
    SUCCESS = "success"
    FAILURE = "failure"
    INFEASIBLE = "infeasible"


class Feasibility(str, Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


class VerdictResult(str, Enum):
    VALID = "valid"
    REJECTED = "rejected"


class MessageRole(str, Enum):
    """Roles of plan-action memory messages."""
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    FEEDBACK = "feedback"


class ThinkingMode(str, Enum):
    FAST = "fast"
    SLOW = "slow"


class ModeOverride(str, Enum):
    AUTO = "auto"
    FAST = "fast"
    SLOW = "slow"


class CheckResult(str, Enum):
    IN_PLACE = "in_place"
    DEVIATED = "deviated"


class Evaluation(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"


class Stage(str, Enum):
    """Which prompt a reasoner invocation answers."""
    MODE_SELECTION = "mode_selection"
    REASONING = "reasoning"
    ACTION = "action"


class TaskGroup(str, Enum):
    """Benchmark task groups."""
    SM = "SM"
    SA = "SA"
    SS = "SS"
    PM = "PM"
    SR = "SR"
    CR = "CR"
    SP = "SP"
    FR = "FR"
    LR = "LR"
    ER = "ER"


CANONICAL_GROUPS = [TaskGroup.SM, TaskGroup.SA, TaskGroup.SS, TaskGroup.PM, TaskGroup.SR]
ROBUSTNESS_GROUPS = [TaskGroup.CR, TaskGroup.SP, TaskGroup.FR, TaskGroup.LR, TaskGroup.ER]


class Vec3(BaseModel):
    """A point in meters."""
    x: float
    y: float
    z: float = 0.0

    @field_validator('x', 'y', 'z')
    @classmethod
    def validate_finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("Vec3 components must be finite")
        return v

    @classmethod
    def from_seq(cls, values) -> "Vec3":
        values = list(values)
        return cls(x=float(values[0]), y=float(values[1]), z=float(values[2]) if len(values) > 2 else 0.0)

    def to_list(self) -> List[float]:
        return [self.x, self.y, self.z]

    def fmt(self) -> str:
        return f"({self.x:.3f}, {self.y:.3f}, {self.z:.3f})"


class RigidObject(BaseModel):
    """A block or bowl in the scene."""
    id: str
    kind: ObjectKind
    color: str
    pose: Vec3
    supported_by: str = TABLE

    @model_validator(mode='after')
    def validate_support(self):
        if self.supported_by == self.id:
            raise ValueError(f"{self.id} cannot support itself")
        return self


class FailureProfile(BaseModel):
    """Stochastic execution failures injected on placement."""
    drop_probability: float = 0.0
    drop_scatter_sigma: float = 0.05

    @field_validator('drop_probability')
    @classmethod
    def validate_probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("drop_probability must lie in [0, 1]")
        return v

    @field_validator('drop_scatter_sigma')
    @classmethod
    def validate_sigma(cls, v):
        if v < 0:
            raise ValueError("drop_scatter_sigma must be non-negative")
        return v


class Workspace(BaseModel):
    """Axis-aligned tabletop rectangle."""
    x_min: float = -0.25
    x_max: float = 0.25
    y_min: float = -0.25
    y_max: float = 0.25

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def clip(self, x: float, y: float) -> Tuple[float, float]:
        return min(max(x, self.x_min), self.x_max), min(max(y, self.y_min), self.y_max)


class WorldConfig(BaseModel):
    """Simulator configuration."""
    workspace: Workspace = Field(default_factory=Workspace)
    stability_offset: float = 0.015
    spawn_min_separation: float = 0.12
    failure: FailureProfile = Field(default_factory=FailureProfile)
    seed: int = 0

    @field_validator('stability_offset')
    @classmethod
    def validate_stability_offset(cls, v):
        if not 0.0 <= v < 0.025:
            raise ValueError("stability_offset must be below the block half-edge (0.025)")
        return v


class ObservedObject(BaseModel):
    id: str
    kind: ObjectKind
    color: str
    pose: Vec3


class Observation(BaseModel):
    """Symbolic view of the scene."""
    objects: List[ObservedObject]
    timestamp: int = 0

    def by_id(self) -> Dict[str, ObservedObject]:
        return {obj.id: obj for obj in self.objects}


class PrimitiveSpec(BaseModel):
    """Catalog entry for one action primitive."""
    name: str
    category: PrimitiveCategory
    parameters: List[Tuple[str, ArgType]]
    description: str = ""


class PrimitiveCall(BaseModel):
    """One parsed action request."""
    primitive: str
    args: Dict[str, Any] = Field(default_factory=dict)
    raw_text: str = ""

    def same_call(self, other: "PrimitiveCall") -> bool:
        return self.primitive == other.primitive and self.args == other.args


class ValidationVerdict(BaseModel):
    result: VerdictResult
    reason: Optional[str] = None

    @model_validator(mode='after')
    def validate_reason(self):
        if self.result == VerdictResult.REJECTED and not self.reason:
            raise ValueError("Rejected verdicts must carry a reason")
        return self

    @property
    def valid(self) -> bool:
        return self.result == VerdictResult.VALID

    @classmethod
    def accept(cls) -> "ValidationVerdict":
        return cls(result=VerdictResult.VALID)

    @classmethod
    def reject(cls, reason: str) -> "ValidationVerdict":
        return cls(result=VerdictResult.REJECTED, reason=reason)


class ExecutionOutcome(BaseModel):
    """Result of executing one primitive call."""
    primitive: str
    success: bool
    error: Optional[str] = None
    moved_object: Optional[str] = None
    base_object: Optional[str] = None
    intended: Optional[Vec3] = None
    achieved: Optional[Vec3] = None
    support: Optional[str] = None
    dropped: bool = False
    observation: Optional[Observation] = None
    finish_status: Optional[TrialStatus] = None
    finish_message: Optional[str] = None

    @property
    def terminal(self) -> bool:
        return self.finish_status is not None


class PostCheck(BaseModel):
    result: CheckResult
    distance: float

    @property
    def deviated(self) -> bool:
        return self.result == CheckResult.DEVIATED


class HistoryMessage(BaseModel):
    role: MessageRole
    content: str
    invocation_index: int = 0
    recovery: bool = False


class PlanStep(BaseModel):
    """One entry of the plan-action memory."""
    index: int
    sequence: int
    intent: Optional[str] = None
    call: PrimitiveCall
    verdict: Optional[ValidationVerdict] = None
    outcome: Optional[ExecutionOutcome] = None
    post_check: Optional[PostCheck] = None
    feedback: Optional[HistoryMessage] = None
    superseded: bool = False

    @property
    def executed(self) -> bool:
        return self.outcome is not None


class Rationale(BaseModel):
    """Five-part slow-thinking rationale."""
    env_status: str
    instruction_restatement: str
    feasibility: Feasibility
    justification: str = ""
    calculations: str
    plan: List[str]


class RationaleEntry(BaseModel):
    sequence: int
    invocation_index: int
    text: str
    rationale: Rationale


class MemoryNote(BaseModel):
    """Free-standing message, e.g. feedback on an unparseable reply."""
    sequence: int
    message: HistoryMessage
    reply: str = ""


class ReasonerRequest(BaseModel):
    messages: List[Dict[str, str]]
    temperature: float = 0.0
    invocation_budget: int = INVOCATION_BUDGET
    stage: Stage = Stage.ACTION

    @field_validator('temperature')
    @classmethod
    def validate_temperature(cls, v):
        if v != 0.0:
            raise ValueError("temperature is fixed at 0")
        return v


class ReasonerResponse(BaseModel):
    text: str
    input_token_count: int = Field(ge=0)
    output_token_count: int = Field(ge=0)
    latency: float = 0.0


class ModeDecision(BaseModel):
    """Outcome of mode selection."""
    mode: ThinkingMode
    predicted_difficulty: float
    signals: str = ""
    slow_threshold: float = SLOW_THRESHOLD
    overridden: bool = False

    @field_validator('predicted_difficulty')
    @classmethod
    def validate_difficulty(cls, v):
        if not 1.0 <= v <= 5.0:
            raise ValueError("predicted difficulty must lie in [1, 5]")
        return v

    @model_validator(mode='after')
    def validate_mode(self):
        if self.overridden:
            return self
        expected = ThinkingMode.SLOW if self.predicted_difficulty >= self.slow_threshold else ThinkingMode.FAST
        if self.mode != expected:
            raise ValueError(f"mode {self.mode.value} contradicts difficulty {self.predicted_difficulty}")
        return self


class AgentConfig(BaseModel):
    """Agent loop settings."""
    invocation_budget: int = INVOCATION_BUDGET
    monitor_threshold: float = MONITOR_THRESHOLD
    slow_threshold: float = SLOW_THRESHOLD
    mode_override: ModeOverride = ModeOverride.AUTO
    closed_loop: bool = True
    noise_sigma: float = 0.0

    @field_validator('invocation_budget')
    @classmethod
    def validate_budget(cls, v):
        if v < 1:
            raise ValueError("invocation budget must be at least 1")
        return v


class GoalSpec(BaseModel):
    """Goal pose per constrained object; unlisted objects are unconstrained."""
    targets: Dict[str, Vec3] = Field(default_factory=dict)
    referenced: List[str] = Field(default_factory=list)
    bowl_targets: Dict[str, str] = Field(default_factory=dict)


class Scenario(BaseModel):
    index: int
    n_pairs: int
    seed: int

    @field_validator('n_pairs')
    @classmethod
    def validate_pairs(cls, v):
        if not MIN_PAIRS <= v <= MAX_PAIRS:
            raise ValueError(f"scenarios hold between {MIN_PAIRS} and {MAX_PAIRS} block-bowl pairs")
        return v


class TaskInstance(BaseModel):
    """A concrete task: instruction, goal and labels."""
    task_id: str
    group: Optional[TaskGroup] = None
    instruction: str
    goal: GoalSpec
    feasibility_label: Feasibility = Feasibility.FEASIBLE
    failure: FailureProfile = Field(default_factory=FailureProfile)
    labeled_difficulty: float
    difficulty: float
    n_pairs: int
    scenario_index: int = 0
    scenario_seed: int = 0
    goal_seed: int = 0


class EvaluationResult(BaseModel):
    verdict: Evaluation
    distances: Dict[str, float] = Field(default_factory=dict)
    contained: Dict[str, bool] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == Evaluation.PASS


class TrialRecord(BaseModel):
    """Full log of one trial."""
    task_id: str
    group: Optional[TaskGroup] = None
    instruction: str = ""
    scenario_index: int = 0
    scenario_seed: int
    n_pairs: int
    goal_seed: int = 0
    backend: str = ""
    world: WorldConfig
    noise_sigma: float = 0.0
    closed_loop: bool = True
    mode_decision: Optional[ModeDecision] = None
    steps: List[PlanStep] = Field(default_factory=list)
    rationales: List[RationaleEntry] = Field(default_factory=list)
    notes: List[MemoryNote] = Field(default_factory=list)
    invocation_budget: int = INVOCATION_BUDGET
    invocation_count: int = 0
    total_input_tokens: int = 0
    total_output_tokens: int = 0
    steps_completed: int = 0
    recovery_events: int = 0
    redundant_actions: int = 0
    wall_time_s: float = 0.0
    time_per_step_s: Optional[float] = None
    predicted_status: TrialStatus = TrialStatus.FAILURE
    feasibility_label: Feasibility = Feasibility.FEASIBLE
    labeled_difficulty: Optional[float] = None
    evaluation: Evaluation = Evaluation.FAIL
    distances: Dict[str, float] = Field(default_factory=dict)
    contained: Dict[str, bool] = Field(default_factory=dict)
    diagnostics: Optional[str] = None
    initial_scene: Dict[str, Any] = Field(default_factory=dict)
    final_scene: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode='after')
    def validate_budget(self):
        if self.invocation_count > self.invocation_budget:
            raise ValueError("invocation count exceeds the budget")
        return self


class TaskSummary(BaseModel):
    """One row of summary.csv."""
    task_id: str
    group: TaskGroup
    trials: int
    success_rate: float
    avg_time_per_step_s: Optional[float] = None
    avg_input_tokens: float
    slow_mode_fraction: float
    avg_predicted_difficulty: Optional[float] = None
    labeled_difficulty: Optional[float] = None
    redundant_actions: int = 0
    skipped: int = 0


class SuiteReport(BaseModel):
    """Aggregated suite results."""
    suite: str
    master_seed: int
    tasks: List[TaskSummary]
    group_rates: Dict[str, float]
    mode_distribution: Dict[str, Dict[str, int]]
    avg_time_per_step_s: Optional[float] = None
    avg_input_tokens: float = 0.0
    total_trials: int = 0
    trials_path: Optional[str] = None
    summary_path: Optional[str] = None
    generated_at: datetime = Field(default_factory=datetime.now)

    @field_validator('group_rates')
    @classmethod
    def validate_rates(cls, v):
        for group, rate in v.items():
            if not 0.0 <= rate <= 100.0:
                raise ValueError(f"rate for {group} outside [0, 100]")
        return v
