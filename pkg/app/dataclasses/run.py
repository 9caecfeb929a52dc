# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Lightweight internal run dataclasses (no Pydantic overhead)."""
# -------------------------------------------
from dataclasses import asdict, dataclass, fields
from typing import Optional


@dataclass(slots=True)
class RunData:
    problem: str
    mode: str
    seed: int
    config_hash: str
    config_json: str
    status: str = "pending"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(slots=True)
class RunOutcome:
    status: Optional[str] = None
    y0: Optional[float] = None
    stderr: Optional[float] = None
    oracle_value: Optional[float] = None
    message: Optional[str] = None

    def to_patch_dict(self) -> dict:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if getattr(self, f.name) is not None
        }
