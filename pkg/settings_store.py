"""
Run configuration persistence layer.
Loads and saves RunConfig documents as JSON. Validation failures surface
as InputError so the CLI can report them with the input exit code.
"""

import json
import logging
import os
from typing import Any

from pydantic import ValidationError

from errors import InputError
from jsonl_utils import atomic_write_json
from models import RunConfig

logger = logging.getLogger(__name__)


def _load_from_file(path: str) -> dict[str, Any]:
    """Load the raw JSON document of a run config."""
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(document, dict):
        raise InputError(f"{path}: expected a JSON object at top level")
    return document


def parse_run_config(document: dict[str, Any], source: str = "<config>") -> RunConfig:
    """Validate a run config document, mapping validation errors to InputError."""
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise InputError(f"{source}: invalid configuration: {e}") from e


def load_run_config(path: str) -> RunConfig:
    """
    Load and validate a run configuration file.

    Args:
        path: JSON file with any subset of the data/features/network/train/
              prediction/variogram/paths blocks

    Returns:
        RunConfig with network.m filled from the feature spec
    """
    run_config = parse_run_config(_load_from_file(path), source=path)
    logger.info(
        f"Loaded config {path}: d={run_config.features.d}, m={run_config.network.m}, "
        f"method={run_config.train.method}, M={run_config.train.ensemble_size}"
    )
    return run_config


def save_run_config(run_config: RunConfig, path: str) -> None:
    """Save a run configuration as canonical JSON."""
    atomic_write_json(path, run_config.model_dump(mode="json"))


def with_overrides(run_config: RunConfig, **blocks: dict[str, Any]) -> RunConfig:
    """
    Return a copy of run_config with fields of named blocks replaced.

    Example: with_overrides(cfg, train={"seed": 3})
    """
    document = run_config.model_dump(mode="json")
    for block, fields in blocks.items():
        document.setdefault(block, {}).update(fields)
    return parse_run_config(document)
