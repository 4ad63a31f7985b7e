from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Union

from pydantic import field_validator, model_validator
from sqlmodel import Field, SQLModel

from app.core.dataset import DEFAULT_SPLIT_PROP
from app.modules.estimator.tsci_algo import DEFAULT_BOOT_DRAWS
from app.modules.multisplit.splitting import Aggregation
from app.modules.selection.selection_algo import (
    DEFAULT_TAU_MIN,
    SelectionMethod,
    ThresholdMode,
)


class LearnerName(str, Enum):
    forest = "forest"
    boosting = "boosting"
    poly = "poly"
    user = "user"


class RunStatus(str, Enum):
    queued = "queued"
    running = "running"
    completed = "completed"
    failed = "failed"


class RunKind(str, Enum):
    estimate = "estimate"
    simulation = "simulation"


class Scenario(str, Enum):
    A = "A"
    B = "B"
    C = "C"


# --- Run configuration (not a table) ---
class RunConfig(SQLModel):
    # Data
    input: Optional[str] = None
    y: str
    d: str
    z: List[str]
    x: List[str] = Field(default_factory=list)
    w: Optional[List[str]] = None

    # Violation space
    vio: Optional[str] = None
    nested: bool = True

    # Treatment model
    learner: LearnerName = LearnerName.forest
    weight_matrix: Optional[str] = None
    num_trees: int = Field(default=200, gt=0)
    min_node_size: int = Field(default=5, gt=0)
    mtry: Optional[int] = Field(default=None, gt=0)
    max_depth: Optional[int] = Field(default=None, gt=0)
    boost_rounds: int = Field(default=100, gt=0)
    shrinkage: float = Field(default=0.1, gt=0, le=1)
    boost_depth: int = Field(default=3, gt=0)
    degree: Union[int, str] = "auto"

    # Inference
    nsplits: int = Field(default=10, ge=1)
    split_prop: float = DEFAULT_SPLIT_PROP
    sel_method: SelectionMethod = SelectionMethod.comparison
    mult_split_method: Aggregation = Aggregation.FWER
    sd_boot: bool = True
    iv_threshold: float = Field(default=DEFAULT_TAU_MIN, ge=0)
    threshold_boot: bool = True
    threshold_mode: ThresholdMode = ThresholdMode.add
    boot_draws: int = Field(default=DEFAULT_BOOT_DRAWS, gt=1)
    alpha: float = 0.05
    seed: Optional[int] = None

    # Output
    extended: bool = False
    out: Optional[str] = None

    @field_validator("split_prop")
    @classmethod
    def check_split_prop(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError(f"split_prop must lie in (0, 1), got {value}")
        return value

    @field_validator("alpha")
    @classmethod
    def check_alpha(cls, value: float) -> float:
        if not 0 < value < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {value}")
        return value

    @field_validator("degree")
    @classmethod
    def check_degree(cls, value: Union[int, str]) -> Union[int, str]:
        if isinstance(value, str):
            if value.strip().lower() == "auto":
                return "auto"
            if not value.strip().isdigit():
                raise ValueError(f"degree must be a positive integer or 'auto', got '{value}'")
            value = int(value)
        if value < 1:
            raise ValueError(f"degree must be at least 1, got {value}")
        return value

    @field_validator("z")
    @classmethod
    def check_instruments(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one instrument column is required")
        return value

    @model_validator(mode="after")
    def check_roles(self) -> "RunConfig":
        if self.y == self.d:
            raise ValueError(f"column '{self.y}' cannot be both outcome and treatment")
        for name in self.z + self.x:
            if name in (self.y, self.d):
                raise ValueError(f"column '{name}' is already used as outcome or treatment")
        overlap = set(self.z) & set(self.x)
        if overlap:
            raise ValueError(f"column(s) {', '.join(sorted(overlap))} assigned to both Z and X")
        if self.learner == LearnerName.user and not self.weight_matrix:
            raise ValueError("the user learner needs --weight-matrix")
        return self


class SimulationRequest(SQLModel):
    scenario: Scenario = Scenario.A
    n: int = Field(default=1000, ge=100)
    reps: int = Field(default=20, ge=1)
    seed: Optional[int] = 0
    nsplits: int = Field(default=1, ge=1)
    num_trees: int = Field(default=100, gt=0)
    boot_draws: int = Field(default=DEFAULT_BOOT_DRAWS, gt=1)
    mult_split_method: Aggregation = Aggregation.DML


# --- Persistence ---
class TsciRun(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: str = Field(index=True, unique=True)  # e.g. RUN-1a2b3c4d
    kind: str = RunKind.estimate.value
    status: str = Field(default=RunStatus.queued.value, index=True)
    config_json: str
    result_json: Optional[str] = None
    report_text: Optional[str] = None
    error: Optional[str] = None
    created_at: datetime = Field(default_factory=datetime.utcnow)
    updated_at: datetime = Field(default_factory=datetime.utcnow)


class RunPublic(SQLModel):
    run_id: str
    kind: str
    status: str
    config: Dict[str, Any]
    result: Optional[Dict[str, Any]] = None
    error: Optional[str] = None
    created_at: datetime
    updated_at: datetime
