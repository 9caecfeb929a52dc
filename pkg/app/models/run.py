# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Experiment run model for the database."""

# -------------------------------------------


from sqlalchemy import Column, DateTime, Float, Integer, String, Text
from sqlalchemy.sql import func

from app.utils.database import Base


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    problem = Column(String(64), nullable=False, index=True)
    mode = Column(String(16), nullable=False)
    seed = Column(Integer, nullable=False)
    config_hash = Column(String(64), nullable=False, index=True)
    config_json = Column(Text, nullable=False)
    status = Column(String(16), default="pending", nullable=False, index=True)
    y0 = Column(Float, nullable=True)
    stderr = Column(Float, nullable=True)
    oracle_value = Column(Float, nullable=True)
    message = Column(Text, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())
    updated_at = Column(DateTime(timezone=True), onupdate=func.now())

    def __repr__(self):
        return f"<ExperimentRun(id={self.id}, problem='{self.problem}', status='{self.status}')>"
