# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""The systems router endpoints."""

# -------------------------------------------
import datetime

from fastapi import APIRouter, HTTPException
from starlette import status

from app.engine.benchmarks import benchmark_registry

router = APIRouter()


@router.get("/health", status_code=status.HTTP_200_OK)
async def check_health():
    """Standard health checker"""
    try:
        response = {
            "timestamp": datetime.datetime.now().isoformat(),
            "message": "solver reporting for duty!",
        }
        return response
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Internal server error: {e!s}",
        ) from e


@router.get("/problems", status_code=status.HTTP_200_OK)
async def list_problems():
    """Registered benchmark names with their oracle kind."""
    problems = {}
    for name, factory in sorted(benchmark_registry.items()):
        bench = factory()
        problems[name] = {"oracle": bench.oracle, "description": bench.description}
    return problems
