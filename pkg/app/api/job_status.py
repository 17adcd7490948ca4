"""
In-process registry of background jobs (training runs started with background=true).

Finished jobs are evicted oldest first once the registry holds more than
API_MAX_JOBS entries; pending and running jobs are never evicted.
"""

import logging
import threading
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from app.config import get_settings

logger = logging.getLogger(__name__)

FINISHED = ("completed", "failed")

_jobs: Dict[str, Dict[str, Any]] = {}
_lock = threading.Lock()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _evict_finished(limit: int) -> int:
    """Drop the oldest finished jobs until at most `limit` remain. Caller holds the lock."""
    excess = len(_jobs) - limit
    if excess <= 0:
        return 0
    stale = [job_id for job_id, job in _jobs.items() if job["status"] in FINISHED][:excess]
    for job_id in stale:
        del _jobs[job_id]
    return len(stale)


async def create_job(job_id: str, kind: str = "train") -> None:
    limit = get_settings().max_jobs
    with _lock:
        if job_id in _jobs:
            return
        _jobs[job_id] = {"job_id": job_id, "kind": kind, "status": "pending", "result": None,
                         "error": None, "created_at": _now(), "updated_at": _now()}
        evicted = _evict_finished(limit)
    if evicted:
        logger.info(f"Evicted {evicted} finished job(s) to stay within {limit}")
    logger.info(f"Created job {job_id} with status 'pending'")


async def update_job_status(job_id: str, status: str, result: Optional[Any] = None,
                            error: Optional[str] = None) -> None:
    with _lock:
        job = _jobs.get(job_id)
        if job is None:
            logger.warning(f"Status update for unknown job {job_id}")
            return
        job.update(status=status, result=result, error=error, updated_at=_now())
    logger.info(f"Updated job {job_id} to status '{status}'")


async def get_job_status(job_id: str) -> Optional[Dict[str, Any]]:
    with _lock:
        job = _jobs.get(job_id)
        return dict(job) if job is not None else None


async def clear_jobs() -> None:
    with _lock:
        _jobs.clear()
