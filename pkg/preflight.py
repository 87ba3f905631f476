"""
Preflight checks run before training.

Returns a structured result instead of raising so the CLI can log every
problem at once and block with a single reason.
"""

import logging
from typing import Any

import numpy as np

from features import build_feature_matrix, feature_count, resolve_feature_spec
from models import RunConfig
from observations import get_observation

logger = logging.getLogger(__name__)


def _check(name: str, ok: bool, summary: str) -> dict[str, Any]:
    return {"name": name, "ok": ok, "summary": summary}


def check_dataset(dataset) -> dict[str, Any]:
    if len(dataset) == 0:
        return _check("dataset", False, "dataset has no observed records")
    return _check("dataset", True, f"{len(dataset)} records at {dataset.n_locations} locations")


def check_feature_consistency(run_config: RunConfig, dataset) -> dict[str, Any]:
    m = feature_count(run_config.features)
    if run_config.network.m != m:
        return _check("features", False, f"network.m={run_config.network.m} but the feature spec yields {m}")
    if dataset.d != run_config.features.d:
        return _check("features", False, f"data has d={dataset.d}; feature spec expects d={run_config.features.d}")
    if tuple(dataset.covariate_names) != run_config.features.exogenous:
        return _check(
            "features", False,
            f"data carries exogenous {dataset.covariate_names}; spec expects {run_config.features.exogenous}",
        )
    if len(dataset):
        spec = resolve_feature_spec(run_config.features, dataset.location_coords)
        X = build_feature_matrix(spec, dataset.space, dataset.time, dataset.covariates)
        if not np.all(np.isfinite(X)):
            return _check("features", False, "non-finite covariates")
    return _check("features", True, f"m={m} covariates")


def check_targets(run_config: RunConfig, dataset) -> dict[str, Any]:
    head = get_observation(run_config.network.observation.kind)
    try:
        head.validate_targets(dataset.values)
    except ValueError as e:
        return _check("targets", False, str(e))
    return _check("targets", True, f"targets valid for {head.kind} observations")


def check_batch_size(run_config: RunConfig, dataset) -> tuple[dict[str, Any], list[str]]:
    batch = run_config.train.batch_size
    if len(dataset) and batch > len(dataset):
        warning = f"batch_size={batch} exceeds {len(dataset)} records and will be clamped"
        return _check("batch_size", True, warning), [warning]
    return _check("batch_size", True, f"batch_size={batch}"), []


def check_inference_options(run_config: RunConfig) -> dict[str, Any]:
    train = run_config.train
    if train.method == "VI" and train.kl_scale_mode != "uniform":
        return _check("inference", False, f"kl_scale_mode={train.kl_scale_mode!r} is reserved")
    return _check("inference", True, f"{train.method} with M={train.ensemble_size}")


def preflight_check(run_config: RunConfig, dataset) -> dict[str, Any]:
    """
    Run all checks.

    Returns:
        {"ok": bool, "checks": [{"name", "ok", "summary"}], "blocked_reason": str|None, "warnings": [str]}
    """
    checks = [check_dataset(dataset)]
    warnings: list[str] = []
    if checks[0]["ok"]:
        checks.append(check_feature_consistency(run_config, dataset))
        checks.append(check_targets(run_config, dataset))
        batch_check, batch_warnings = check_batch_size(run_config, dataset)
        checks.append(batch_check)
        warnings.extend(batch_warnings)
    checks.append(check_inference_options(run_config))

    failed = [c for c in checks if not c["ok"]]
    result = {
        "ok": not failed,
        "checks": checks,
        "blocked_reason": "; ".join(c["summary"] for c in failed) if failed else None,
        "warnings": warnings,
    }
    for c in checks:
        logger.info(f"  preflight {c['name']}: {'OK' if c['ok'] else 'FAIL'} - {c['summary']}")
    return result
