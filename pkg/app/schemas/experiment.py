# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Experiment configuration and report schemas."""
# -------------------------------------------
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

COMMON_MODEL_CONFIG = ConfigDict(
    validate_assignment=False,
    str_strip_whitespace=True,
    extra="forbid",
    populate_by_name=True,
)

Mode = Literal["constrained", "penalized", "dual", "primal", "oracle"]

# Fields that never change the numbers of a run and stay out of the config hash.
UNHASHED_FIELDS = {"threads", "out", "dump_paths"}


class ExperimentConfig(BaseModel):
    """One solver run: benchmark, solver mode and numerical parameters."""

    model_config = COMMON_MODEL_CONFIG

    problem: str = Field("bangbang1d", min_length=1, description="Registered benchmark name")
    mode: Mode = Field("constrained", description="Solver mode")

    paths: int = Field(20_000, ge=100, description="Monte Carlo scenarios P")
    steps: Optional[int] = Field(None, ge=1, description="Time steps N (benchmark default if unset)")
    particles: Optional[int] = Field(
        None, ge=1, description="Filter particles M per scenario (benchmark default if unset)"
    )
    total_mass: Optional[float] = Field(
        None, gt=0, alias="lambda", description="Total intensity mass Lambda of the control grid"
    )
    seed: int = Field(0, ge=0, description="Master seed")
    threads: Optional[int] = Field(None, ge=1, description="Worker threads (default: logical cores)")

    degree: int = Field(2, ge=0, le=4, description="Polynomial degree of the regression basis")
    estimator: Literal["crossfit", "plain"] = Field("crossfit", description="Sup estimator")
    regression: Literal["joint", "bucket"] = Field(
        "joint", description="Pooled fit over feature x control products, or one fit per bucket"
    )
    knots: Optional[int] = Field(
        None, ge=0, le=16, description="Hinge knots per feature (benchmark default if unset)"
    )
    bootstrap: int = Field(16, ge=0, description="Bootstrap replicates of the value standard error")
    penalty_n: int = Field(16, ge=0, description="Penalization parameter n")
    penalty_step: Literal["implicit", "explicit"] = Field("implicit", description="Penalty step form")
    mark_law: Literal["poisson", "resampled"] = Field("poisson", description="Scenario mark law")
    initial_mark: Literal["random", "anchor"] = Field("random", description="Initial mark of scenarios")
    feature_map: Literal["moments", "quantized"] = Field("moments", description="Filter feature map")
    quant_k: int = Field(4, ge=1, description="Quantization points of the quantized feature map")
    resample: Literal["multinomial", "systematic", "none"] = Field(
        "multinomial", description="Particle resampling scheme"
    )
    min_bucket: int = Field(50, ge=1, description="Minimum scenarios per (knot, control) bucket")
    policy_paths: int = Field(0, ge=0, description="Primal paths for the greedy policy (0 = mode default)")

    dual_budget: int = Field(50, ge=1, description="Gain evaluations of the intensity search")
    dual_blocks: Optional[int] = Field(
        None, ge=1, description="Time blocks of the intensity family (one per step if unset)"
    )
    dual_lower: float = Field(0.05, gt=0, description="Lower intensity bound")
    dual_upper: float = Field(20.0, gt=0, description="Upper intensity bound")

    oracle_paths: int = Field(20_000, ge=100, description="Monte Carlo paths of sampling oracles")
    lattice_nodes: int = Field(401, ge=5, description="Spatial nodes of the lattice oracle")

    out: Optional[str] = Field(None, description="Output directory")
    dump_paths: bool = Field(False, description="Also write the binary path dump")

    def hashed_dump(self) -> dict[str, Any]:
        return self.model_dump(exclude=UNHASHED_FIELDS)


class OracleReport(BaseModel):
    model_config = COMMON_MODEL_CONFIG

    kind: str = Field(..., description="hjb, lqg, plain, closed_form")
    value: float = Field(..., description="Reference value")
    stderr: Optional[float] = Field(None, description="Monte Carlo error of the reference, if sampled")
    lower: Optional[float] = Field(None, description="Lower end of the acceptance bracket")
    upper: Optional[float] = Field(None, description="Upper end of the acceptance bracket")
    details: dict[str, Any] = Field(default_factory=dict)


class ExperimentReport(BaseModel):
    """Summary written to report.json; free of timestamps and host data."""

    model_config = COMMON_MODEL_CONFIG

    problem: str
    mode: Mode
    config_hash: str
    seed: int
    steps: int
    paths: int
    particles: int
    total_mass: float
    y0: float
    stderr: float
    oracle: Optional[OracleReport] = None
    relative_error: Optional[float] = None
    solution: dict[str, Any] = Field(default_factory=dict)
    dual: Optional[dict[str, Any]] = None
    primal: Optional[dict[str, Any]] = None


class CheckRow(BaseModel):
    model_config = COMMON_MODEL_CONFIG

    check: str
    statistic: float
    tolerance: float
    passed: bool
    detail: str = ""
