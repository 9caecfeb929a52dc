# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Run ledger schemas for API responses and listing."""
# -------------------------------------------

from datetime import datetime
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

COMMON_MODEL_CONFIG = ConfigDict(
    validate_assignment=False,
    validate_default=False,
    str_strip_whitespace=True,
    extra="ignore",
)

RunStatus = Literal["pending", "running", "completed", "failed"]


class RunResponse(BaseModel):
    """Schema for run responses."""

    model_config = ConfigDict(
        from_attributes=True,
        **COMMON_MODEL_CONFIG,
    )

    id: int = Field(..., description="Unique run identifier")
    problem: str = Field(..., description="Benchmark name")
    mode: str = Field(..., description="Solver mode")
    seed: int = Field(..., description="Master seed")
    config_hash: str = Field(..., description="SHA-256 of the validated configuration")
    status: RunStatus = Field(..., description="Run status")
    y0: float | None = Field(None, description="Value estimate")
    stderr: float | None = Field(None, description="Monte Carlo standard error of y0")
    oracle_value: float | None = Field(None, description="Reference value, when available")
    message: str | None = Field(None, description="Error message of a failed run")
    created_at: datetime = Field(..., description="Creation timestamp")
    updated_at: datetime | None = Field(None, description="Last update timestamp")


class RunList(BaseModel):
    """Schema for paginated run list responses."""

    model_config = COMMON_MODEL_CONFIG

    items: list[RunResponse] = Field(..., description="List of runs")
    total: int = Field(..., description="Total number of runs")
    page: int = Field(..., description="Current page number")
    per_page: int = Field(..., description="Runs per page")


class RunQueryParams(BaseModel):
    """Query params for listing runs."""

    model_config = COMMON_MODEL_CONFIG

    page: int = Field(1, ge=1, description="Page number (starts at 1)")
    per_page: int = Field(10, ge=1, le=100, description="Runs per page")
    status: RunStatus | None = Field(None, description="Filter by status")
    problem: str | None = Field(None, min_length=1, max_length=64, description="Filter by problem")
