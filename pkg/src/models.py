from sqlalchemy import Column, String, DateTime, Integer, Text
from datetime import datetime, timezone
from src.db import Base

# Run status constants
STATUS_RUNNING = "running"
STATUS_COMPLETED = "completed"
STATUS_FAILED = "failed"


class RunRecord(Base):
    """
    One CLI invocation that produced files (synth, featurize, run, report, benchmark).
    Bookkeeping only: nothing here feeds back into run outputs.
    """
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String, nullable=False, index=True)  # config hash + master seed
    command = Column(String, nullable=False)  # synth|featurize|run|report|benchmark
    status = Column(String, default=STATUS_RUNNING, nullable=False, index=True)
    output_dir = Column(String, nullable=True)
    config_hash = Column(String, nullable=True)
    master_seed = Column(Integer, nullable=True)
    started_at = Column(DateTime, default=lambda: datetime.now(timezone.utc))
    completed_at = Column(DateTime, nullable=True)
    n_ledger_rows = Column(Integer, nullable=True)
    error_message = Column(Text, nullable=True)
