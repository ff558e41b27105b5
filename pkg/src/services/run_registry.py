"""
Run registry.

Keeps a row per CLI invocation in the registry database so past runs can be listed
with their status and output directory. Registry problems are logged and swallowed:
a broken database must never fail an experiment.
"""

import hashlib
import json
import logging
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from src.db import SessionLocal, init_db
from src.models import RunRecord, STATUS_RUNNING, STATUS_COMPLETED, STATUS_FAILED

logger = logging.getLogger(__name__)


def config_hash(config: Dict[str, Any]) -> str:
    """Short SHA-256 hash of a configuration dict (key order independent)."""
    payload = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def start_run(command: str, config: Dict[str, Any], output_dir: str,
              master_seed: Optional[int] = None) -> Optional[int]:
    """
    Register a starting run.

    Args:
        command: CLI subcommand name
        config: Fully resolved configuration
        output_dir: Where the run writes its files
        master_seed: Run-level seed, if any

    Returns:
        Registry row id, or None if the registry is unavailable
    """
    digest = config_hash(config)
    run_id = f"{digest}-{master_seed if master_seed is not None else 'na'}"
    try:
        init_db()
        session = SessionLocal()
        try:
            record = RunRecord(
                run_id=run_id,
                command=command,
                status=STATUS_RUNNING,
                output_dir=str(output_dir),
                config_hash=digest,
                master_seed=master_seed,
            )
            session.add(record)
            session.commit()
            logger.info(f"[REGISTRY] Started {command} run {run_id} (row {record.id})")
            return record.id
        finally:
            session.close()
    except Exception as e:
        logger.warning(f"[REGISTRY] Could not register run {run_id}: {e}")
        return None


def _finish(row_id: Optional[int], status: str, n_ledger_rows: Optional[int] = None,
            error_message: Optional[str] = None) -> None:
    if row_id is None:
        return
    try:
        session = SessionLocal()
        try:
            record = session.query(RunRecord).filter_by(id=row_id).first()
            if record is None:
                logger.warning(f"[REGISTRY] Row {row_id} vanished before completion")
                return
            record.status = status
            record.completed_at = datetime.now(timezone.utc)
            if n_ledger_rows is not None:
                record.n_ledger_rows = n_ledger_rows
            if error_message:
                record.error_message = error_message[:2000]
            session.commit()
            logger.debug(f"[REGISTRY] Row {row_id} marked {status}")
        finally:
            session.close()
    except Exception as e:
        logger.warning(f"[REGISTRY] Could not update row {row_id}: {e}")


def complete_run(row_id: Optional[int], n_ledger_rows: Optional[int] = None) -> None:
    """Mark a registered run as completed."""
    _finish(row_id, STATUS_COMPLETED, n_ledger_rows=n_ledger_rows)


def fail_run(row_id: Optional[int], error_message: str) -> None:
    """Mark a registered run as failed with its error message."""
    _finish(row_id, STATUS_FAILED, error_message=error_message)


def list_runs(limit: int = 50) -> List[Dict[str, Any]]:
    """
    Most recent registry rows, newest first.

    Returns:
        List of dicts with run_id, command, status, output_dir, started_at, completed_at
    """
    try:
        init_db()
        session = SessionLocal()
        try:
            records = session.query(RunRecord)\
                .order_by(RunRecord.id.desc())\
                .limit(limit)\
                .all()
            return [
                {
                    "id": r.id,
                    "run_id": r.run_id,
                    "command": r.command,
                    "status": r.status,
                    "output_dir": r.output_dir,
                    "started_at": r.started_at.isoformat() if r.started_at else None,
                    "completed_at": r.completed_at.isoformat() if r.completed_at else None,
                    "n_ledger_rows": r.n_ledger_rows,
                    "error_message": r.error_message,
                }
                for r in records
            ]
        finally:
            session.close()
    except Exception as e:
        logger.warning(f"[REGISTRY] Could not list runs: {e}")
        return []
