# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""The runs router of the API (async)."""
# -------------------------------------------
import logging

import orjson
from fastapi import APIRouter, Depends, HTTPException, status
from fastapi.concurrency import run_in_threadpool
from sqlalchemy.ext.asyncio import AsyncSession

from app.crud.run import run_crud
from app.dataclasses.run import RunData, RunOutcome
from app.engine.benchmarks import get_benchmark
from app.engine.experiment import run_experiment
from app.schemas.experiment import ExperimentConfig
from app.schemas.run import RunList, RunQueryParams, RunResponse
from app.utils.config import config_hash
from app.utils.database import get_db
from app.utils.validation import NumericError, SolverError, ValidationError

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/runs", tags=["runs"])


# Incoming Request: POST /runs
#          ↓
# Row written with status "running"
#          ↓
# Experiment runs in the threadpool
#          ↓
# Row updated: "completed" with y0, or "failed" with the message
@router.post("/", response_model=RunResponse, status_code=status.HTTP_201_CREATED)
async def create_run(config: ExperimentConfig, db: AsyncSession = Depends(get_db)):
    """Validate, persist and execute one experiment."""
    try:
        get_benchmark(config.problem)
    except ValidationError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e

    internal = RunData(
        problem=config.problem,
        mode=config.mode,
        seed=config.seed,
        config_hash=config_hash(config),
        config_json=orjson.dumps(config.model_dump(by_alias=True), option=orjson.OPT_SORT_KEYS).decode(),
        status="running",
    )
    run = await run_crud.create(db, internal.to_dict())
    logger.info(f"Run {run.id} started ({config.problem} / {config.mode})")

    try:
        result = await run_in_threadpool(run_experiment, config)
    except SolverError as e:
        failed = RunOutcome(status="failed", message=f"{type(e).__name__}: {e}")
        await run_crud.update(db, run.id, failed.to_patch_dict())
        code = 409 if isinstance(e, NumericError) else 422
        raise HTTPException(status_code=code, detail=f"run {run.id} failed: {e}") from e

    report = result.report
    outcome = RunOutcome(
        status="completed",
        y0=report.y0,
        stderr=report.stderr,
        oracle_value=report.oracle.value if report.oracle else None,
    )
    return await run_crud.update(db, run.id, outcome.to_patch_dict())


@router.get("/{run_id}", response_model=RunResponse, summary="Get a run by ID")
async def read_run(run_id: int, db: AsyncSession = Depends(get_db)):
    run = await run_crud.get(db, run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return run


@router.get("/", response_model=RunList, summary="List runs (paginated)")
async def list_runs(
    params: RunQueryParams = Depends(),
    db: AsyncSession = Depends(get_db),
):
    """List runs newest first, optionally filtered by status and problem."""
    skip = (params.page - 1) * params.per_page
    runs = await run_crud.get_multi(
        db, skip=skip, limit=params.per_page, status=params.status, problem=params.problem
    )
    total = await run_crud.count(db, status=params.status, problem=params.problem)
    return RunList(items=runs, total=total, page=params.page, per_page=params.per_page)
