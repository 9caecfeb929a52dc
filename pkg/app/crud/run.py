# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""CRUD operations for experiment runs (async)."""
# -------------------------------------------

from typing import Any, List, Mapping, Optional

from sqlalchemy import func, select
from sqlalchemy.ext.asyncio import AsyncSession

from app.models.run import ExperimentRun


class RunCRUD:
    """Async CRUD operations for the run ledger."""

    async def create(self, db: AsyncSession, data: Mapping[str, Any]) -> ExperimentRun:
        db_run = ExperimentRun(**data)
        db.add(db_run)
        await db.commit()
        await db.refresh(db_run)
        return db_run

    async def get(self, db: AsyncSession, run_id: int) -> Optional[ExperimentRun]:
        result = await db.execute(select(ExperimentRun).where(ExperimentRun.id == run_id))
        return result.scalar_one_or_none()

    @staticmethod
    def _filtered(stmt, status: Optional[str], problem: Optional[str]):
        if status is not None:
            stmt = stmt.where(ExperimentRun.status == status)
        if problem is not None:
            stmt = stmt.where(ExperimentRun.problem == problem)
        return stmt

    async def get_multi(
        self,
        db: AsyncSession,
        skip: int = 0,
        limit: int = 100,
        status: Optional[str] = None,
        problem: Optional[str] = None,
    ) -> List[ExperimentRun]:
        """Runs newest first, optionally filtered by status and problem."""
        stmt = self._filtered(select(ExperimentRun), status, problem)
        stmt = stmt.order_by(ExperimentRun.id.desc()).offset(skip).limit(limit)
        result = await db.execute(stmt)
        return list(result.scalars().all())

    async def update(
        self, db: AsyncSession, run_id: int, changes: Mapping[str, Any]
    ) -> Optional[ExperimentRun]:
        db_run = await self.get(db, run_id)
        if not db_run:
            return None

        for field, value in changes.items():
            setattr(db_run, field, value)

        await db.commit()
        await db.refresh(db_run)
        return db_run

    async def count(
        self,
        db: AsyncSession,
        status: Optional[str] = None,
        problem: Optional[str] = None,
    ) -> int:
        stmt = self._filtered(select(func.count()).select_from(ExperimentRun), status, problem)
        result = await db.execute(stmt)
        return result.scalar_one()

    async def find_by_hash(self, db: AsyncSession, config_hash: str) -> List[ExperimentRun]:
        """Earlier runs of the same configuration."""
        stmt = select(ExperimentRun).where(ExperimentRun.config_hash == config_hash)
        result = await db.execute(stmt)
        return list(result.scalars().all())


# Create instance
run_crud = RunCRUD()
