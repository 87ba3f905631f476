"""
JSONL run log.
Appends one structured record per CLI run (training, prediction,
evaluation, variogram) to logs/runs.jsonl.
"""

import logging
from datetime import datetime, timedelta
from typing import Any, Optional

import config
from jsonl_utils import atomic_append_jsonl, read_jsonl

logger = logging.getLogger(__name__)


def log_run_event(event: str, **fields: Any) -> bool:
    """
    Append a run event.
    Returns True on success, False on failure.
    """
    record = {"ts_iso": datetime.utcnow().isoformat() + "Z", "event": event, **fields}
    try:
        atomic_append_jsonl(config.RUN_LOG_FILE, record)
        return True
    except Exception as e:
        logger.error(f"Failed to append to {config.RUN_LOG_FILE}: {e}")
        return False


def log_training_run(ensemble, checkpoint_dir: str, n_records: int, elapsed_s: float, split: Optional[int] = None) -> bool:
    finals = [trace[-1][1] for trace in ensemble.traces if trace]
    return log_run_event(
        "train",
        method=ensemble.method,
        ensemble_size=ensemble.size,
        config_hash=ensemble.config_hash,
        checkpoint=checkpoint_dir,
        n_records=n_records,
        split=split,
        final_objectives=finals,
        elapsed_s=round(elapsed_s, 3),
    )


def log_evaluation(report, checkpoint_dir: str, split: Optional[int] = None, **extra: Any) -> bool:
    return log_run_event(
        "evaluate",
        checkpoint=checkpoint_dir,
        split=split,
        **report.model_dump(),
        **extra,
    )


def get_run_events(hours: Optional[int] = None, event: Optional[str] = None) -> list[dict]:
    """Run events, optionally restricted to the last `hours` and one event type."""
    events = read_jsonl(config.RUN_LOG_FILE)
    if event is not None:
        events = [e for e in events if e.get("event") == event]
    if hours is None:
        return events
    cutoff = datetime.utcnow() - timedelta(hours=hours)
    recent = []
    for e in events:
        try:
            if datetime.fromisoformat(e["ts_iso"].rstrip("Z")) >= cutoff:
                recent.append(e)
        except (KeyError, ValueError):
            continue
    return recent
