from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from config import CONFIG_SCHEMA_VERSION, DEFAULT_THREADS
from models.chain_models import ChainRequest

Pipeline = Literal["simulate", "exact", "verify"]
CouplingName = Literal["mirror", "kc", "eight", "tree", "independent"]
CheckName = Literal[
    "maximality", "wasser", "varadhan", "nonuniqueness", "bisector-equidistance",
    "kc-mirror", "gasket-metric", "marginals", "hahn", "gasket-subdivision", "kc-schedule",
]


class ExperimentConfig(BaseModel):
    """One run of a pipeline; serialized as the JSON config file"""
    schema_version: int = CONFIG_SCHEMA_VERSION
    pipeline: Pipeline = "simulate"
    space: str = "euclidean"
    dim: int = Field(1, ge=1)
    x1: Optional[List[float]] = None
    x2: Optional[List[float]] = None
    coupling: CouplingName = "mirror"
    t_grid: List[float] = Field(default_factory=lambda: [0.25, 1.0, 4.0])
    trials: int = Field(1000, ge=1)
    chain: Optional[ChainRequest] = None
    check: Optional[CheckName] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    dt: Optional[float] = Field(None, gt=0)
    eps: Optional[float] = Field(None, gt=0)
    poisson_lambda: Optional[float] = Field(None, gt=0)
    threads: int = Field(DEFAULT_THREADS, ge=1)
    output: Optional[str] = None

    @field_validator("schema_version")
    @classmethod
    def known_schema(cls, v: int) -> int:
        if v != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {CONFIG_SCHEMA_VERSION}")
        return v

    @field_validator("t_grid")
    @classmethod
    def increasing_grid(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("t_grid must not be empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("t_grid must be strictly increasing")
        if v[0] < 0:
            raise ValueError("t_grid must be non-negative")
        return v

    @model_validator(mode="after")
    def pipeline_requirements(self):
        if self.pipeline == "simulate" and self.seed is None:
            raise ValueError("a seed is required for simulate runs")
        if self.pipeline == "verify" and self.check is None:
            raise ValueError("verify runs need a check name")
        return self

    def hash_payload(self) -> Dict[str, Any]:
        """Fields that determine the outputs (threads and output path excluded)"""
        return self.model_dump(mode="json", exclude={"threads", "output"})


class ResultManifest(BaseModel):
    run_id: str
    pipeline: Pipeline
    created_at: str
    config: Dict[str, Any]
    config_hash: str
    outputs: List[str] = Field(default_factory=list)
    checks: List[Dict[str, Any]] = Field(default_factory=list)
    summary: Dict[str, Any] = Field(default_factory=dict)
    wall_clock: float = 0.0
    passed: bool = True


class VerifyRequest(BaseModel):
    check: CheckName
    params: Dict[str, Any] = Field(default_factory=dict)
