from sqlalchemy import Boolean, Column, DateTime, Float, Integer, String
from sqlalchemy.orm import declarative_base
from pydantic import BaseModel
from datetime import datetime
from typing import Optional

Base = declarative_base()


class ReplicateRow(Base):
    """One method at one level on one simulated dataset."""
    __tablename__ = "replicates"

    id = Column(Integer, primary_key=True, autoincrement=True)
    sweep_id = Column(String(64), nullable=False, index=True)
    setting = Column(String(32), nullable=False, index=True)
    replicate = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    alpha = Column(Float, nullable=False)
    method = Column(String(16), nullable=False)

    # Selection outcome
    n_selected = Column(Integer, default=0)
    fdp = Column(Float)
    power = Column(Float)
    diversity = Column(Float)
    normalized_diversity = Column(Float)
    tau_star = Column(Integer)
    tau_bh = Column(Integer)
    subset_of_cs = Column(Boolean)
    wall_time = Column(Float)

    created_at = Column(DateTime, default=datetime.utcnow)


class ReplicateRowPydantic(BaseModel):
    """Pydantic model for replicate row validation."""
    sweep_id: str
    setting: str
    replicate: int
    seed: int
    alpha: float
    method: str
    n_selected: int = 0
    fdp: Optional[float] = None
    power: Optional[float] = None
    diversity: Optional[float] = None
    normalized_diversity: Optional[float] = None
    tau_star: Optional[int] = None
    tau_bh: Optional[int] = None
    subset_of_cs: Optional[bool] = None
    wall_time: Optional[float] = None
    created_at: Optional[datetime] = None

    class Config:
        from_attributes = True


def create_all_tables(engine):
    Base.metadata.create_all(bind=engine)
