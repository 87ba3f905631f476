"""
Process-level configuration for the BayesNF toolkit.
Centralizes environment-driven settings with safe defaults.

Environment variables (all optional):
- BAYESNF_LOG_LEVEL: logging level for the CLI (default INFO)
- BAYESNF_LOG_DIR: directory for log files and run events (default logs)
- BAYESNF_LOG_TO_FILE: also write CLI logs to BAYESNF_LOG_DIR (default true)
- BAYESNF_CHECKPOINT_DIR: default checkpoint directory (default checkpoints)
- BAYESNF_OUTPUT_DIR: default directory for tables and surfaces (default outputs)
- BAYESNF_MAX_WORKERS: ensemble members trained concurrently (default 1)
- BAYESNF_TORCH_THREADS: intra-op torch threads (default 1)
- BAYESNF_TARGET_STEPS: gradient steps used to size epochs when unset (default 5000)
- BAYESNF_VI_DRAWS: parameter draws per predictive mixture for VI ensembles (default 64)
"""

import logging
import os


logger = logging.getLogger(__name__)


def get_bool(key: str, default: bool = False) -> bool:
    """Get a boolean config value from environment."""
    val = os.getenv(key, "")
    return val.lower() in ("true", "1", "yes", "on") if val else default


def get_int(key: str, default: int) -> int:
    """Get an integer config value from environment."""
    val = os.getenv(key, "")
    try:
        return int(val) if val else default
    except ValueError:
        logger.warning(f"{key}={val!r} is not an integer, using {default}")
        return default


def get_str(key: str, default: str = "") -> str:
    """Get a string config value from environment."""
    return os.getenv(key, default) or default


LOG_LEVEL: str = get_str("BAYESNF_LOG_LEVEL", "INFO").upper()
LOG_DIR: str = get_str("BAYESNF_LOG_DIR", "logs")
LOG_TO_FILE: bool = get_bool("BAYESNF_LOG_TO_FILE", True)
CLI_LOG_FILE: str = os.path.join(LOG_DIR, "bayesnf.log")
RUN_LOG_FILE: str = os.path.join(LOG_DIR, "runs.jsonl")

CHECKPOINT_DIR: str = get_str("BAYESNF_CHECKPOINT_DIR", "checkpoints")
OUTPUT_DIR: str = get_str("BAYESNF_OUTPUT_DIR", "outputs")

MAX_WORKERS: int = get_int("BAYESNF_MAX_WORKERS", 1)
TORCH_THREADS: int = get_int("BAYESNF_TORCH_THREADS", 1)

TARGET_TOTAL_STEPS: int = get_int("BAYESNF_TARGET_STEPS", 5000)
DEFAULT_VI_DRAWS: int = get_int("BAYESNF_VI_DRAWS", 64)


def validate_config() -> list[str]:
    """
    Validate configuration and return list of warnings.
    Returns empty list if all settings are usable as given.
    """
    warnings = []

    if LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        warnings.append(f"BAYESNF_LOG_LEVEL={LOG_LEVEL} is not a logging level; INFO is used.")

    if MAX_WORKERS < 1:
        warnings.append("BAYESNF_MAX_WORKERS must be >= 1; members will train sequentially.")

    if TORCH_THREADS > 1:
        warnings.append(
            "BAYESNF_TORCH_THREADS > 1 may change floating-point reduction order; "
            "checkpoints are only bit-reproducible at a fixed thread count."
        )

    if TARGET_TOTAL_STEPS < 1:
        warnings.append("BAYESNF_TARGET_STEPS must be >= 1.")

    if DEFAULT_VI_DRAWS < 1:
        warnings.append("BAYESNF_VI_DRAWS must be >= 1.")

    return warnings


def log_config_summary() -> None:
    """Log current configuration for debugging."""
    logger.info("=" * 60)
    logger.info("BAYESNF CONFIGURATION")
    logger.info(f"  LOG_LEVEL: {LOG_LEVEL}")
    logger.info(f"  LOG_DIR: {LOG_DIR} (file logging: {LOG_TO_FILE})")
    logger.info(f"  CHECKPOINT_DIR: {CHECKPOINT_DIR}")
    logger.info(f"  OUTPUT_DIR: {OUTPUT_DIR}")
    logger.info(f"  MAX_WORKERS: {MAX_WORKERS}")
    logger.info(f"  TORCH_THREADS: {TORCH_THREADS}")
    logger.info(f"  TARGET_TOTAL_STEPS: {TARGET_TOTAL_STEPS}")
    logger.info(f"  DEFAULT_VI_DRAWS: {DEFAULT_VI_DRAWS}")
    for warning in validate_config():
        logger.warning(f"  {warning}")
    logger.info("=" * 60)
