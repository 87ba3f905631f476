"""
Checkpoint persistence for fitted ensembles.

A checkpoint directory holds one JSON file per member, one objective-curve
CSV per member and manifest.json. The manifest records the method, config
hash, parameter layout, member seeds, the resolved run configuration and a
sha256 digest over all member values. Files are written atomically and
contain no timestamps, so identical fits give byte-identical checkpoints.
"""

import hashlib
import logging
import os
from datetime import datetime
from typing import Any, Optional

import numpy as np

from errors import CompatibilityError
from inference import PosteriorEnsemble, VariationalParams
from jsonl_utils import atomic_write_json, atomic_write_text, read_json
from model import ParamVector, build_layout
from models import FeatureSpec, NetworkConfig, RunConfig

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
FORMAT_VERSION = 1


def _member_arrays(member) -> list[np.ndarray]:
    if isinstance(member, VariationalParams):
        return [member.mean, member.raw_scale]
    return [member.values]


def values_digest(ensemble: PosteriorEnsemble) -> str:
    """sha256 over the float64 bytes of every member array, in member order."""
    digest = hashlib.sha256()
    for member in ensemble.members:
        for array in _member_arrays(member):
            digest.update(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return digest.hexdigest()


def _member_document(member) -> dict[str, Any]:
    if isinstance(member, VariationalParams):
        return {"mean": member.mean.tolist(), "raw_scale": member.raw_scale.tolist()}
    return {"values": member.values.tolist()}


def _curve_text(trace) -> str:
    lines = ["step,objective"]
    lines.extend(f"{step},{value!r}" for step, value in trace)
    return "\n".join(lines) + "\n"


def save_ensemble(
    ensemble: PosteriorEnsemble,
    directory: str,
    run_config: Optional[RunConfig] = None,
    origin: Optional[datetime] = None,
    frequency: Optional[str] = None,
) -> dict[str, Any]:
    """
    Write an ensemble checkpoint.

    Args:
        ensemble: Fitted ensemble
        directory: Checkpoint directory (created if needed)
        run_config: Run configuration stored for later predict/evaluate
        origin: Time origin of the training data, for encoding query timestamps
        frequency: Measurement frequency of the training data

    Returns:
        The manifest document
    """
    os.makedirs(directory, exist_ok=True)
    members = []
    for k, member in enumerate(ensemble.members):
        member_file = f"member_{k:03d}.json"
        curve_file = f"member_{k:03d}_curve.csv"
        atomic_write_json(os.path.join(directory, member_file), _member_document(member), indent=None)
        trace = ensemble.traces[k] if k < len(ensemble.traces) else ()
        atomic_write_text(os.path.join(directory, curve_file), _curve_text(trace))
        seed = ensemble.member_seeds[k] if k < len(ensemble.member_seeds) else None
        members.append({"file": member_file, "curve": curve_file, "seed": seed})

    manifest = {
        "format_version": FORMAT_VERSION,
        "method": ensemble.method,
        "config_hash": ensemble.config_hash,
        "values_sha256": values_digest(ensemble),
        "ensemble_size": ensemble.size,
        "layout": [b.model_dump(mode="json") for b in ensemble.layout.blocks],
        "network": ensemble.network.model_dump(mode="json"),
        "features": ensemble.features.model_dump(mode="json"),
        "run_config": None if run_config is None else run_config.model_dump(mode="json"),
        "data": {
            "origin": None if origin is None else origin.isoformat(),
            "frequency": frequency,
        },
        "members": members,
    }
    atomic_write_json(os.path.join(directory, MANIFEST_FILE), manifest)
    logger.info(f"Saved {ensemble.method} checkpoint with {ensemble.size} members to {directory}")
    return manifest


def load_manifest(directory: str) -> dict[str, Any]:
    path = os.path.join(directory, MANIFEST_FILE)
    if not os.path.exists(path):
        raise CompatibilityError(f"no checkpoint manifest at {path}")
    manifest = read_json(path)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(f"unsupported checkpoint format {manifest.get('format_version')!r} in {path}")
    return manifest


def load_ensemble(directory: str) -> tuple[PosteriorEnsemble, dict[str, Any]]:
    """
    Read a checkpoint written by save_ensemble.

    Raises:
        CompatibilityError: missing files, a layout that does not match the
            stored network, or member values that do not match the digest
    """
    manifest = load_manifest(directory)
    network = NetworkConfig.model_validate(manifest["network"])
    features = FeatureSpec.model_validate(manifest["features"])
    layout = build_layout(network)
    if [b.model_dump(mode="json") for b in layout.blocks] != manifest["layout"]:
        raise CompatibilityError(f"{directory}: stored layout does not match the stored network configuration")

    members = []
    for entry in manifest["members"]:
        path = os.path.join(directory, entry["file"])
        if not os.path.exists(path):
            raise CompatibilityError(f"checkpoint member file missing: {path}")
        document = read_json(path)
        if manifest["method"] == "VI":
            members.append(VariationalParams(mean=document["mean"], raw_scale=document["raw_scale"], layout=layout))
        else:
            members.append(ParamVector(values=document["values"], layout=layout))

    ensemble = PosteriorEnsemble.from_members(
        method=manifest["method"],
        members=members,
        network=network,
        features=features,
        member_seeds=[entry["seed"] for entry in manifest["members"] if entry["seed"] is not None],
    )
    if ensemble.config_hash != manifest["config_hash"]:
        raise CompatibilityError(f"{directory}: config hash does not match the stored configuration")
    if values_digest(ensemble) != manifest["values_sha256"]:
        raise CompatibilityError(f"{directory}: member values do not match the manifest digest")
    logger.info(f"Loaded {ensemble.method} checkpoint with {ensemble.size} members from {directory}")
    return ensemble, manifest
