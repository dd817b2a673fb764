from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"
    TANH = "tanh"


class ColumnKind(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


class GeneratorKind(str, Enum):
    VAE = "vae"
    TVAE = "tvae"


class ReplayPolicy(str, Enum):
    MATCH_CURRENT = "match-current"
    PER_GENERATOR = "per-generator"


class Method(str, Enum):
    NAIVE = "naive"
    CUMULATIVE = "cumulative"
    SINGLE_GEN_VAE = "singlegen-vae"
    SINGLE_GEN_TVAE = "singlegen-tvae"
    SINGLE_GEN_TVAE_WIDE = "singlegen-tvae-wide"
    MULTI_GEN_TVAE = "multigen-tvae"

    @property
    def is_generative(self) -> bool:
        return self not in (Method.NAIVE, Method.CUMULATIVE)


class EpochProfile(str, Enum):
    """Epoch budget of a run: model defaults, or the reduced budget of benchmark sweeps"""

    FULL = "full"
    BENCHMARK = "benchmark"

    @property
    def solver_epochs(self) -> Optional[int]:
        return 50 if self == EpochProfile.BENCHMARK else None

    @property
    def generator_epochs(self) -> Optional[int]:
        return 100 if self == EpochProfile.BENCHMARK else None


class UEType(str, Enum):
    UE1 = "UE1"
    UE2 = "UE2"
    UE3 = "UE3"

    @property
    def index(self) -> int:
        """0-based position of the UE type in configuration vectors"""
        return int(self.value[2:]) - 1

    @classmethod
    def from_number(cls, number: int) -> "UEType":
        return cls(f"UE{number}")


class Pattern(str, Enum):
    P1 = "P1"  # stationary at position 1
    P2 = "P2"  # stationary at position 2
    P3 = "P3"  # stationary at position 3
    P4 = "P4"  # rectangular movement
    P5 = "P5"  # zigzag movement 1 -> 2 -> 3 -> 1
    P6 = "P6"  # linear movement 1 -> 2 -> 3 -> 1

    @property
    def is_moving(self) -> bool:
        return self in (Pattern.P4, Pattern.P5, Pattern.P6)

    @classmethod
    def from_number(cls, number: int) -> "Pattern":
        return cls(f"P{number}")


# Configuration models
class GeneratorConfig(BaseModel):
    kind: GeneratorKind = GeneratorKind.TVAE
    latent_dim: int = 32
    hidden_sizes: List[int] = Field(default_factory=lambda: [128, 128])
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_modes: int = 10
    decoder_sigma: float = 0.1
    warm_start: bool = False

    @field_validator("latent_dim", "epochs", "batch_size", "max_modes")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("hidden_sizes")
    @classmethod
    def _hidden_non_empty(cls, value: List[int]) -> List[int]:
        if not value or any(size < 1 for size in value):
            raise ValueError("hidden_sizes must be a non-empty list of positive sizes")
        return value

    @field_validator("learning_rate", "decoder_sigma")
    @classmethod
    def _positive_real(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be > 0")
        return value


class SolverConfig(BaseModel):
    hidden_sizes: List[int] = Field(default_factory=lambda: [200, 150, 100, 50])
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    standardizer_decay: float = 0.99

    @field_validator("epochs", "batch_size")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("standardizer_decay")
    @classmethod
    def _decay_range(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("standardizer_decay must lie in [0, 1]")
        return value


class ScholarConfig(BaseModel):
    alpha: float = 0.5
    replay_policy: ReplayPolicy = ReplayPolicy.MATCH_CURRENT
    solver: SolverConfig = Field(default_factory=SolverConfig)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)

    @field_validator("alpha")
    @classmethod
    def _alpha_range(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return value

    def with_profile(self, profile: EpochProfile) -> "ScholarConfig":
        """Copy with the profile's epoch counts; FULL leaves the config unchanged"""
        solver, generator = self.solver, self.generator
        if profile.solver_epochs is not None:
            solver = solver.model_copy(update={"epochs": profile.solver_epochs})
        if profile.generator_epochs is not None:
            generator = generator.model_copy(update={"epochs": profile.generator_epochs})
        return self.model_copy(update={"solver": solver, "generator": generator})


class RunConfig(BaseModel):
    """Everything one `replayforge run` invocation needs"""

    case_id: Optional[int] = None
    ue_row: Optional[List[int]] = None
    p_row: Optional[List[int]] = None
    methods: List[Method] = Field(default_factory=lambda: list(Method))
    alpha: float = 0.5
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    samples_per_task: int = 2000
    train_fraction: float = 0.7
    out_dir: str = "runs"
    tail_pct: float = 90.0
    replay_policy: ReplayPolicy = ReplayPolicy.MATCH_CURRENT
    solver_epochs: Optional[int] = None
    generator_epochs: Optional[int] = None
    profile: EpochProfile = EpochProfile.FULL
    jobs: int = 1
    resume: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if not self.methods:
            raise ValueError("methods must not be empty")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.case_id is None and (self.ue_row is None or self.p_row is None):
            raise ValueError("either case_id or both ue_row and p_row are required")
        if self.case_id is not None and not 1 <= self.case_id <= 8:
            raise ValueError(f"unknown case_id {self.case_id}; valid: 1..8")
        if self.ue_row is not None and self.p_row is not None:
            if len(self.ue_row) != len(self.p_row) or not self.ue_row:
                raise ValueError("ue_row and p_row must be non-empty and equally long")
            if any(not 1 <= ue <= 3 for ue in self.ue_row):
                raise ValueError("ue_row entries must lie in 1..3")
            if any(not 1 <= p <= 6 for p in self.p_row):
                raise ValueError("p_row entries must lie in 1..6")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if not 0.0 < self.tail_pct < 100.0:
            raise ValueError("tail_pct must lie in (0, 100)")
        if self.samples_per_task < 2:
            raise ValueError("samples_per_task must be >= 2")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        return self


# Report models (one JSON document per run)
class MetricSummary(BaseModel):
    ave_mape: float
    forgetting: Optional[float] = None
    f_k: Dict[str, float] = Field(default_factory=dict)


class TailSummary(BaseModel):
    percentile: float
    threshold: float
    matrix: List[List[Optional[float]]]
    ave_mape: Optional[float] = None
    forgetting: Optional[float] = None
    coverage: float
    refused: bool = False


class RunReport(BaseModel):
    method: Method
    case_id: Optional[int] = None
    ue_row: List[int]
    p_row: List[int]
    seed: int
    samples_per_task: int
    alpha: float
    task_labels: List[str]
    result_matrix: List[List[float]]
    summary: MetricSummary
    default_k: List[int] = Field(default_factory=list)
    tail: TailSummary
    storage_bytes: List[int]
    diagnostics: Dict[str, float] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)
