"""
BayesNF command-line interface.

Subcommands:
  train      fit an ensemble (optionally per cross-validation split) and write checkpoints
  predict    predictive mean and quantiles at the indices of a query table
  evaluate   RMSE, MAE, MIS, coverage and interval width on held-out data
  simulate   sample a dataset from the prior of a configured network
  variogram  empirical or model-inferred variogram surface
  split      write the train/test tables of the cross-validation splits

Exit codes: 0 success, 2 input error, 3 checkpoint/config mismatch, 4 numerical failure.
"""

import argparse
import logging
import os
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch
from dateutil import parser as date_parser
from pydantic import ValidationError

import config
from checkpoint_store import load_ensemble, save_ensemble
from data import (
    Dataset,
    RawTable,
    decode_time,
    encode,
    export_table,
    format_timestamps,
    load_table,
    make_splits,
    time_index,
    write_table,
)
from errors import BayesNFError, CompatibilityError, InputError
from inference import PosteriorEnsemble, fit
from jsonl_logger import log_evaluation, log_run_event, log_training_run
from jsonl_utils import atomic_write_text
from metrics import RECORD_HEADER, ScoreReport, aggregate_reports, coverage, score_predictions
from model import simulate_field
from models import RunConfig, SpaceTimeIndex, config_hash
from predict import predict_batch, quantile_column
from preflight import preflight_check
from settings_store import load_run_config, parse_run_config, with_overrides
from variogram import empirical_variogram, inferred_variogram, uniform_locations_in_hull

logger = logging.getLogger(__name__)

EXIT_OK = 0
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
EVAL_ALPHA = 0.05
DEFAULT_ORIGIN = datetime(2000, 1, 1)

_file_logging_ready = False


def setup_logging() -> None:
    """Console logging to stdout, plus logs/bayesnf.log when BAYESNF_LOG_TO_FILE is on."""
    global _file_logging_ready
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL, logging.INFO),
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stdout)],
    )
    if config.LOG_TO_FILE and not _file_logging_ready:
        Path(config.LOG_DIR).mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(config.CLI_LOG_FILE)
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(file_handler)
        _file_logging_ready = True


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _data_path(args: argparse.Namespace, run_config: RunConfig) -> str:
    path = args.data or run_config.data.path
    if not path:
        raise InputError("no data file: pass --data or set data.path in the config")
    return path


def _load_dataset(path: str, run_config: RunConfig, origin: Optional[datetime] = None) -> Dataset:
    table = load_table(path, run_config.data, exogenous=run_config.features.exogenous)
    return encode(table, origin=origin)


def _split_checkpoint(base: str, k: int) -> str:
    candidate = os.path.join(base, f"split_{k:02d}")
    return candidate if os.path.isdir(candidate) else base


def _check_split_index(k: int, n_splits: int) -> None:
    if not 0 <= k < n_splits:
        raise InputError(f"--split-index {k} outside [0, {n_splits})")


def _checkpoint_origin(manifest: dict) -> datetime:
    origin = manifest.get("data", {}).get("origin")
    if origin is None:
        raise CompatibilityError("checkpoint records no time origin for encoding timestamps")
    return date_parser.isoparse(origin)


def _load_checkpoint(path: str, config_path: Optional[str] = None) -> tuple[PosteriorEnsemble, RunConfig, dict]:
    """
    Load a checkpoint and its stored run configuration.

    With config_path, the given config must describe the same features and
    network as the checkpoint (spatial bounds default to the checkpoint's).
    """
    ensemble, manifest = load_ensemble(path)
    if manifest.get("run_config") is None:
        raise CompatibilityError(f"checkpoint {path} has no stored run configuration")
    run_config = parse_run_config(manifest["run_config"], source=path)
    if config_path:
        other = load_run_config(config_path)
        features = other.features
        if features.spatial_bounds is None and ensemble.features.spatial_bounds is not None:
            features = features.model_copy(update={"spatial_bounds": ensemble.features.spatial_bounds})
        if config_hash(features, other.network) != ensemble.config_hash:
            raise CompatibilityError(
                f"config {config_path} (hash {config_hash(features, other.network)}) does not match "
                f"checkpoint {path} (hash {ensemble.config_hash})"
            )
    return ensemble, run_config, manifest


def _parse_quantiles(text: str) -> tuple[float, ...]:
    try:
        levels = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as e:
        raise InputError(f"invalid --quantiles {text!r}: {e}") from e
    if not levels:
        raise InputError("--quantiles needs at least one level")
    bad = [q for q in levels if not 0 < q < 1]
    if bad:
        raise InputError(f"quantile levels must lie in (0, 1), got {bad}")
    return levels


def _query_indices(table: RawTable, origin: datetime, frequency: str) -> list[SpaceTimeIndex]:
    steps: dict[datetime, int] = {}
    indices = []
    for coords, ts in zip(table.coordinates, table.timestamps):
        if ts not in steps:
            steps[ts] = time_index(ts, origin, frequency)
        indices.append(SpaceTimeIndex(space=tuple(float(c) for c in coords), time=float(steps[ts])))
    return indices


def _write_frame(frame: pd.DataFrame, path: str) -> None:
    atomic_write_text(path, frame.to_csv(index=False, na_rep="", lineterminator="\n"))
    logger.info(f"Wrote {len(frame)} rows to {path}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_one(run_config: RunConfig, dataset: Dataset, checkpoint_dir: str, split: Optional[int] = None) -> None:
    result = preflight_check(run_config, dataset)
    for warning in result["warnings"]:
        logger.warning(warning)
    if not result["ok"]:
        raise InputError(f"preflight blocked: {result['blocked_reason']}")

    started = time.monotonic()
    ensemble = fit(run_config.network, dataset, run_config.features, run_config.train)
    resolved = run_config.model_copy(update={"features": ensemble.features, "network": ensemble.network})
    save_ensemble(ensemble, checkpoint_dir, resolved, origin=dataset.origin, frequency=dataset.frequency)
    log_training_run(ensemble, checkpoint_dir, len(dataset), time.monotonic() - started, split=split)


def cmd_train(args: argparse.Namespace) -> int:
    run_config = load_run_config(args.config)
    if args.seed is not None:
        run_config = with_overrides(run_config, train={"seed": args.seed})
    config.log_config_summary()
    dataset = _load_dataset(_data_path(args, run_config), run_config)
    checkpoint_dir = args.checkpoint or run_config.paths.checkpoint_dir

    if not args.splits:
        _train_one(run_config, dataset, checkpoint_dir)
        return EXIT_OK

    targets = [args.split_index] if args.split_index is not None else list(range(args.splits))
    for k in targets:
        _check_split_index(k, args.splits)
    pairs = make_splits(dataset, args.splits, run_config.data.holdout_fraction, run_config.data.split_seed)
    for k in targets:
        logger.info(f"Training split {k + 1}/{args.splits}")
        _train_one(run_config, pairs[k][0], os.path.join(checkpoint_dir, f"split_{k:02d}"), split=k)
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def cmd_predict(args: argparse.Namespace) -> int:
    ensemble, run_config, manifest = _load_checkpoint(args.checkpoint, args.config)
    table = load_table(args.data, run_config.data, exogenous=run_config.features.exogenous, require_value=False)
    indices = _query_indices(table, _checkpoint_origin(manifest), manifest["data"]["frequency"])
    quantiles = _parse_quantiles(args.quantiles) if args.quantiles else run_config.prediction.quantiles
    seed = args.seed if args.seed is not None else run_config.prediction.seed

    frame = predict_batch(
        ensemble, ensemble.network, ensemble.features, indices, quantiles,
        exogenous=table.covariates,
        location_ids=[str(loc) for loc in table.locations],
        n_draws=run_config.prediction.n_draws,
        seed=seed,
    )
    frame.insert(frame.columns.get_loc("t") + 1, "timestamp", format_timestamps(table.timestamps))
    _write_frame(frame, args.out or os.path.join(run_config.paths.output_dir, "predictions.csv"))
    log_run_event("predict", checkpoint=args.checkpoint, n_queries=len(indices), quantiles=list(quantiles))
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _evaluate_one(ensemble: PosteriorEnsemble, run_config: RunConfig, test: Dataset, seed: int) -> tuple[ScoreReport, dict]:
    if len(test) == 0:
        raise InputError("test set is empty")
    levels = (EVAL_ALPHA / 2, 0.5, 1 - EVAL_ALPHA / 2)
    frame = predict_batch(
        ensemble, ensemble.network, ensemble.features, test.indices(), levels,
        exogenous=test.covariates, n_draws=run_config.prediction.n_draws, seed=seed,
    )
    lower, point, upper = (frame[quantile_column(q)].to_numpy() for q in levels)
    report = score_predictions(test.values, point, lower, upper, EVAL_ALPHA)
    extras = {
        "coverage": coverage(test.values, lower, upper),
        "mean_width": float(np.mean(upper - lower)),
    }
    return report, extras


def _evaluation_row(label: str, report: ScoreReport, extras: dict) -> str:
    return f"{label},{report.to_record()},{extras['coverage']!r},{extras['mean_width']!r}"


def cmd_evaluate(args: argparse.Namespace) -> int:
    rows = []
    reports = []
    output_dir = None

    if args.splits:
        targets = [args.split_index] if args.split_index is not None else list(range(args.splits))
        for k in targets:
            _check_split_index(k, args.splits)
        full = None
        for k in targets:
            checkpoint = _split_checkpoint(args.checkpoint, k)
            ensemble, run_config, manifest = _load_checkpoint(checkpoint, args.config)
            if full is None:
                full = _load_dataset(_data_path(args, run_config), run_config, origin=_checkpoint_origin(manifest))
                output_dir = run_config.paths.output_dir
            test = make_splits(full, args.splits, run_config.data.holdout_fraction, run_config.data.split_seed)[k][1]
            seed = args.seed if args.seed is not None else run_config.prediction.seed
            report, extras = _evaluate_one(ensemble, run_config, test, seed)
            reports.append((report, extras))
            rows.append(_evaluation_row(str(k), report, extras))
            log_evaluation(report, checkpoint, split=k, **extras)
            print(f"split {k}: {report.to_text()}  coverage={extras['coverage']:.3f}")
        if len(reports) > 1:
            overall = aggregate_reports([r for r, _ in reports])
            extras = {
                "coverage": float(np.mean([e["coverage"] for _, e in reports])),
                "mean_width": float(np.mean([e["mean_width"] for _, e in reports])),
            }
            rows.append(_evaluation_row("mean", overall, extras))
            print(f"mean over {len(reports)} splits: {overall.to_text()}  coverage={extras['coverage']:.3f}")
    else:
        ensemble, run_config, manifest = _load_checkpoint(args.checkpoint, args.config)
        output_dir = run_config.paths.output_dir
        test = _load_dataset(_data_path(args, run_config), run_config, origin=_checkpoint_origin(manifest))
        seed = args.seed if args.seed is not None else run_config.prediction.seed
        report, extras = _evaluate_one(ensemble, run_config, test, seed)
        rows.append(_evaluation_row("all", report, extras))
        log_evaluation(report, args.checkpoint, **extras)
        print(f"{report.to_text()}  coverage={extras['coverage']:.3f}  width={extras['mean_width']:.4f}")

    text = "\n".join([f"split,{RECORD_HEADER},coverage,mean_width", *rows]) + "\n"
    atomic_write_text(args.out or os.path.join(output_dir, "evaluation.csv"), text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    run_config = load_run_config(args.config)
    features = run_config.features
    if features.exogenous:
        raise InputError("simulation does not support exogenous covariates")
    if args.n_locations < 1 or args.n_times < 1:
        raise InputError("--n-locations and --n-times must be positive")
    seed = args.seed if args.seed is not None else run_config.train.seed

    bounds = np.asarray(features.spatial_bounds or [(0.0, 1.0)] * features.d, dtype=np.float64)
    if features.has_spatial_fourier and features.spatial_bounds is None:
        features = features.model_copy(update={"spatial_bounds": tuple(tuple(b) for b in bounds.tolist())})
    coords = np.random.default_rng([seed, 2]).uniform(bounds[:, 0], bounds[:, 1], size=(args.n_locations, features.d))
    indices = [
        SpaceTimeIndex(space=tuple(float(c) for c in point), time=float(t))
        for point in coords
        for t in range(args.n_times)
    ]
    values = simulate_field(run_config.network, seed, indices, features)

    schema = run_config.data
    origin = date_parser.isoparse(schema.origin) if schema.origin else DEFAULT_ORIGIN
    frame = pd.DataFrame({schema.location_column: [f"L{i:04d}" for i in range(args.n_locations) for _ in range(args.n_times)]})
    for k, column in enumerate(schema.coordinate_columns):
        frame[column] = np.repeat(coords[:, k], args.n_times)
    frame[schema.time_column] = [decode_time(origin, t, schema.frequency) for _ in range(args.n_locations) for t in range(args.n_times)]
    frame[schema.value_column] = values

    out = args.out or os.path.join(run_config.paths.output_dir, "simulated.csv")
    write_table(RawTable(frame=frame, data_schema=schema), out)
    log_run_event("simulate", out=out, rows=len(frame), seed=seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# variogram
# ---------------------------------------------------------------------------

def cmd_variogram(args: argparse.Namespace) -> int:
    if args.mode == "inferred":
        if not args.checkpoint:
            raise CompatibilityError("inferred variogram requires --checkpoint")
        ensemble, run_config, manifest = _load_checkpoint(args.checkpoint, args.config)
        dataset = _load_dataset(_data_path(args, run_config), run_config, origin=_checkpoint_origin(manifest))
        seed = args.seed if args.seed is not None else run_config.prediction.seed
        n_locations = args.n_locations or dataset.n_locations
        locations = uniform_locations_in_hull(dataset, n_locations, seed)
        times = np.arange(dataset.time.min(), dataset.time.max() + 1)
        surface = inferred_variogram(
            ensemble, ensemble.network, ensemble.features, locations, times,
            run_config.variogram, seed=seed, n_draws=run_config.variogram.inferred_draws,
        )
    else:
        if not args.config:
            raise InputError("empirical variogram requires --config")
        run_config = load_run_config(args.config)
        dataset = _load_dataset(_data_path(args, run_config), run_config)
        surface = empirical_variogram(dataset, run_config.variogram)

    out = args.out or os.path.join(run_config.paths.output_dir, f"variogram_{args.mode}.csv")
    _write_frame(surface.to_frame(), out)
    log_run_event("variogram", mode=args.mode, out=out, populated=int(surface.populated.sum()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

def cmd_split(args: argparse.Namespace) -> int:
    run_config = load_run_config(args.config)
    dataset = _load_dataset(_data_path(args, run_config), run_config)
    seed = args.seed if args.seed is not None else run_config.data.split_seed
    pairs = make_splits(dataset, args.splits, run_config.data.holdout_fraction, seed)
    out_dir = args.out or os.path.join(run_config.paths.output_dir, "splits")
    for k, (train, test) in enumerate(pairs):
        write_table(export_table(train, run_config.data), os.path.join(out_dir, f"split_{k:02d}_train.csv"))
        write_table(export_table(test, run_config.data), os.path.join(out_dir, f"split_{k:02d}_test.csv"))
        print(f"split {k}: {len(train)} train / {len(test)} test records")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "variogram": cmd_variogram,
    "split": cmd_split,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesnf",
        description="Bayesian Neural Fields for spatiotemporal prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Fit an ensemble and write a checkpoint")
    train.add_argument("--config", required=True, help="Run configuration JSON")
    train.add_argument("--data", help="Observation table (default: data.path)")
    train.add_argument("--checkpoint", help="Checkpoint directory (default: paths.checkpoint_dir)")
    train.add_argument("--seed", type=int, help="Override train.seed")
    train.add_argument("--splits", type=int, help="Train on the train part of k location splits")
    train.add_argument("--split-index", type=int, help="Only this split (default: all)")

    predict = sub.add_parser("predict", help="Predictive mean and quantiles at query indices")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--data", required=True, help="Query table: location, coordinates, timestamp")
    predict.add_argument("--config", help="Check that this config matches the checkpoint")
    predict.add_argument("--out", help="Output table (default: outputs/predictions.csv)")
    predict.add_argument("--quantiles", help="Comma-separated levels, e.g. 0.025,0.5,0.975")
    predict.add_argument("--seed", type=int, help="Seed for VI parameter draws")

    evaluate = sub.add_parser("evaluate", help="Score predictions on held-out data")
    evaluate.add_argument("--checkpoint", required=True, help="Checkpoint, or parent of split_XX checkpoints")
    evaluate.add_argument("--data", help="Test table, or the full table with --splits")
    evaluate.add_argument("--config", help="Check that this config matches the checkpoint")
    evaluate.add_argument("--splits", type=int, help="Evaluate on the test part of k location splits")
    evaluate.add_argument("--split-index", type=int, help="Only this split (default: all, plus their mean)")
    evaluate.add_argument("--out", help="Report table (default: outputs/evaluation.csv)")
    evaluate.add_argument("--seed", type=int)

    simulate = sub.add_parser("simulate", help="Sample a dataset from the prior")
    simulate.add_argument("--config", required=True)
    simulate.add_argument("--out", help="Output table (default: outputs/simulated.csv)")
    simulate.add_argument("--n-locations", type=int, default=10)
    simulate.add_argument("--n-times", type=int, default=50)
    simulate.add_argument("--seed", type=int)

    variogram = sub.add_parser("variogram", help="Empirical or model-inferred variogram surface")
    variogram.add_argument("--mode", choices=("empirical", "inferred"), default="empirical")
    variogram.add_argument("--config")
    variogram.add_argument("--data")
    variogram.add_argument("--checkpoint", help="Required for --mode inferred")
    variogram.add_argument("--out")
    variogram.add_argument("--n-locations", type=int, help="Locations sampled in the hull (inferred mode)")
    variogram.add_argument("--seed", type=int)

    split = sub.add_parser("split", help="Write train/test tables of location splits")
    split.add_argument("--config", required=True)
    split.add_argument("--data")
    split.add_argument("--splits", type=int, required=True)
    split.add_argument("--out", help="Output directory (default: outputs/splits)")
    split.add_argument("--seed", type=int, help="Override data.split_seed")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    torch.set_num_threads(max(1, config.TORCH_THREADS))
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except BayesNFError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{args.command} failed: invalid input: {e}")
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
