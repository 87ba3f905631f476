"""
Atomic file writes and locked JSONL access.

Checkpoints, curves, tables and the run log are all written through here:
whole files via temp-file-and-rename, log records via locked appends.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, List, Optional, Union

import portalocker

logger = logging.getLogger(__name__)

LOCK_TIMEOUT_S = 10

PathLike = Union[str, Path]


def _prepare(filepath: PathLike) -> Path:
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write_text(filepath: PathLike, text: str) -> None:
    """Replace filepath with text; readers see the old file or the new one, never a mix."""
    path = _prepare(filepath)
    fd, temp_path = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as tmp:
            tmp.write(text)
            tmp.flush()
            os.fsync(tmp.fileno())
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise


def atomic_write_json(filepath: PathLike, data: Any, indent: Optional[int] = 2) -> None:
    """Sorted-key JSON, so equal documents give equal bytes."""
    atomic_write_text(filepath, json.dumps(data, indent=indent, sort_keys=True) + "\n")


def read_json(filepath: PathLike) -> Any:
    with portalocker.Lock(str(filepath), mode="r", timeout=LOCK_TIMEOUT_S) as f:
        return json.load(f)


def atomic_append_jsonl(filepath: PathLike, record: dict) -> None:
    """Append one record as a JSON line under an exclusive lock."""
    path = _prepare(filepath)
    line = json.dumps(record, default=str) + "\n"
    with portalocker.Lock(str(path), mode="a", timeout=LOCK_TIMEOUT_S) as f:
        f.write(line)
        f.flush()
        os.fsync(f.fileno())


def read_jsonl(filepath: PathLike, limit: Optional[int] = None) -> List[dict]:
    """
    Records of a JSONL file, oldest first.

    Args:
        filepath: Path to the JSONL file
        limit: Keep only the last `limit` records

    Returns:
        Parsed records; an absent or locked file gives []. Malformed lines
        are skipped with a warning.
    """
    path = Path(filepath)
    if not path.exists():
        return []

    records: List[dict] = []
    bad_lines: List[int] = []
    try:
        with portalocker.Lock(str(path), mode="r", timeout=LOCK_TIMEOUT_S) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    bad_lines.append(lineno)
    except (OSError, portalocker.LockException) as e:
        logger.warning(f"Could not read {path}: {e}")
        return []

    if bad_lines:
        logger.warning(f"{path}: skipped {len(bad_lines)} malformed line(s), first at line {bad_lines[0]}")
    if limit and limit > 0:
        return records[-limit:]
    return records
