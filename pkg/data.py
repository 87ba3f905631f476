"""
Observation tables: loading, encoding and train/test splitting.

A RawTable is the delimited file as parsed (one row per location/timestamp,
missing values kept as NaN). encode() turns it into a Dataset of observed
records with integer time steps from the earliest timestamp and a location
registry that retains locations whose every value is missing.
"""

import logging
import math
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from dateutil import parser as date_parser
from dateutil.relativedelta import relativedelta
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from errors import InputError
from jsonl_utils import atomic_write_text
from models import DataSchema, Frequency, SpaceTimeIndex

logger = logging.getLogger(__name__)

_FIXED_UNITS = {
    "Weekly": timedelta(weeks=1),
    "Daily": timedelta(days=1),
    "Hourly": timedelta(hours=1),
    "Minutely": timedelta(minutes=1),
    "Secondly": timedelta(seconds=1),
}
_MONTH_UNITS = {"Monthly": 1, "Quarterly": 3, "Yearly": 12}

LOCATION_ID = "location_id"


def _frozen_array(v, dtype=np.float64) -> np.ndarray:
    arr = np.array(v, dtype=dtype)
    arr.setflags(write=False)
    return arr


class RawTable(BaseModel):
    """
    A parsed observation table.

    frame columns: the schema's location, coordinate and time columns, the
    value column (NaN where missing, absent for query tables) and any
    exogenous columns. lines holds the source line number of each row.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    frame: pd.DataFrame
    data_schema: DataSchema
    lines: tuple[int, ...] = ()
    exogenous: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def has_values(self) -> bool:
        return self.data_schema.value_column in self.frame.columns

    @property
    def locations(self) -> np.ndarray:
        return self.frame[self.data_schema.location_column].to_numpy(dtype=str)

    @property
    def coordinates(self) -> np.ndarray:
        return self.frame[list(self.data_schema.coordinate_columns)].to_numpy(dtype=np.float64)

    @property
    def timestamps(self) -> list[datetime]:
        return [pd.Timestamp(ts).to_pydatetime() for ts in self.frame[self.data_schema.time_column]]

    @property
    def values(self) -> np.ndarray:
        return self.frame[self.data_schema.value_column].to_numpy(dtype=np.float64)

    @property
    def covariates(self) -> Optional[np.ndarray]:
        if not self.exogenous:
            return None
        return self.frame[list(self.exogenous)].to_numpy(dtype=np.float64)


class Dataset(BaseModel):
    """
    Observed records with integer-step times and a location registry.

    Arrays are read-only. location_index maps each record to the registry
    (location_ids, location_coords); registry entries may have no records.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: np.ndarray
    time: np.ndarray
    values: np.ndarray
    location_index: np.ndarray
    location_ids: tuple[str, ...]
    location_coords: np.ndarray
    covariates: Optional[np.ndarray] = None
    covariate_names: tuple[str, ...] = ()
    origin: Optional[datetime] = None
    frequency: Optional[Frequency] = None

    @field_validator("space", "location_coords", mode="before")
    @classmethod
    def _as_matrix(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        arr.setflags(write=False)
        return arr

    @field_validator("time", "values", mode="before")
    @classmethod
    def _as_vector(cls, v) -> np.ndarray:
        return _frozen_array(np.asarray(v, dtype=np.float64).reshape(-1))

    @field_validator("location_index", mode="before")
    @classmethod
    def _as_index(cls, v) -> np.ndarray:
        return _frozen_array(np.asarray(v).reshape(-1), dtype=np.int64)

    @field_validator("covariates", mode="before")
    @classmethod
    def _as_covariates(cls, v):
        if v is None:
            return None
        return _frozen_array(v)

    @model_validator(mode="after")
    def _check_shapes(self) -> "Dataset":
        n = len(self.time)
        if self.space.shape[0] != n or len(self.values) != n or len(self.location_index) != n:
            raise ValueError("space, time, values and location_index must have one entry per record")
        if len(self.location_ids) != self.location_coords.shape[0]:
            raise ValueError("location registry ids and coordinates differ in length")
        if n and (self.location_index.min() < 0 or self.location_index.max() >= len(self.location_ids)):
            raise ValueError("location_index outside the location registry")
        if self.covariates is not None and self.covariates.shape != (n, len(self.covariate_names)):
            raise ValueError(f"covariates shape {self.covariates.shape} does not match {self.covariate_names}")
        if n:
            keys = np.stack([self.location_index.astype(np.float64), self.time], axis=1)
            if len(np.unique(keys, axis=0)) != n:
                raise ValueError("duplicate (location, time) records")
        return self

    def __len__(self) -> int:
        return len(self.time)

    @property
    def d(self) -> int:
        return self.location_coords.shape[1]

    @property
    def n_locations(self) -> int:
        return len(self.location_ids)

    @classmethod
    def from_arrays(
        cls,
        space,
        time,
        values,
        location_ids: Optional[Sequence[str]] = None,
        covariates=None,
        covariate_names: Sequence[str] = (),
        origin: Optional[datetime] = None,
        frequency: Optional[str] = None,
    ) -> "Dataset":
        """
        Build a Dataset from record arrays.

        Without location_ids, each distinct coordinate row is one location.
        """
        space = np.asarray(space, dtype=np.float64)
        if space.ndim == 1:
            space = space.reshape(-1, 1)
        if len(space) == 0:
            coords, index, ids = space, np.zeros(0, dtype=np.int64), ()
        elif location_ids is None:
            coords, index = np.unique(space, axis=0, return_inverse=True)
            ids = tuple(f"loc{i:04d}" for i in range(len(coords)))
        else:
            location_ids = np.asarray(location_ids, dtype=str)
            ids_sorted, first, index = np.unique(location_ids, return_index=True, return_inverse=True)
            ids = tuple(str(i) for i in ids_sorted)
            coords = space[first]
        return cls(
            space=space,
            time=time,
            values=values,
            location_index=np.asarray(index).reshape(-1),
            location_ids=ids,
            location_coords=coords,
            covariates=covariates,
            covariate_names=tuple(covariate_names),
            origin=origin,
            frequency=frequency,
        )

    def subset(self, mask) -> "Dataset":
        """Records selected by a boolean mask or index array; the registry is kept whole."""
        mask = np.asarray(mask)
        return self.model_copy(
            update={
                "space": _frozen_array(self.space[mask]),
                "time": _frozen_array(self.time[mask]),
                "values": _frozen_array(self.values[mask]),
                "location_index": _frozen_array(self.location_index[mask], dtype=np.int64),
                "covariates": None if self.covariates is None else _frozen_array(self.covariates[mask]),
            }
        )

    def indices(self) -> list[SpaceTimeIndex]:
        return [
            SpaceTimeIndex(space=tuple(float(c) for c in s), time=float(t))
            for s, t in zip(self.space, self.time)
        ]


class SplitPlan(BaseModel):
    """Assignment of locations to test partitions."""
    model_config = ConfigDict(frozen=True)

    n_splits: int
    holdout_fraction: float
    assignment: dict[str, int]


# ---------------------------------------------------------------------------
# Time encoding
# ---------------------------------------------------------------------------

def _naive_utc(ts: datetime) -> datetime:
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def time_index(timestamp: datetime, origin: datetime, frequency: str) -> int:
    """
    Whole number of frequency units from origin to timestamp.

    Raises:
        InputError: if timestamp is not on the frequency grid anchored at origin
    """
    if frequency in _FIXED_UNITS:
        steps, remainder = divmod(timestamp - origin, _FIXED_UNITS[frequency])
        if remainder:
            raise InputError(
                f"timestamp {timestamp.isoformat()} is off the {frequency} grid starting {origin.isoformat()}"
            )
        return int(steps)
    if frequency in _MONTH_UNITS:
        per = _MONTH_UNITS[frequency]
        months = (timestamp.year - origin.year) * 12 + (timestamp.month - origin.month)
        steps, remainder = divmod(months, per)
        if remainder or origin + relativedelta(months=steps * per) != timestamp:
            raise InputError(
                f"timestamp {timestamp.isoformat()} is off the {frequency} grid starting {origin.isoformat()}"
            )
        return int(steps)
    raise InputError(f"unknown frequency {frequency!r}")


def decode_time(origin: datetime, step: float, frequency: str) -> datetime:
    """Timestamp of integer step `step` on the grid anchored at origin."""
    step = int(round(step))
    if frequency in _FIXED_UNITS:
        return origin + step * _FIXED_UNITS[frequency]
    if frequency in _MONTH_UNITS:
        return origin + relativedelta(months=step * _MONTH_UNITS[frequency])
    raise InputError(f"unknown frequency {frequency!r}")


def format_timestamps(timestamps: Sequence[datetime]) -> list[str]:
    """ISO dates when every timestamp is midnight, full ISO datetimes otherwise."""
    if all(ts.hour == 0 and ts.minute == 0 and ts.second == 0 and ts.microsecond == 0 for ts in timestamps):
        return [ts.strftime("%Y-%m-%d") for ts in timestamps]
    return [ts.isoformat() for ts in timestamps]


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _first_bad(mask: np.ndarray) -> Optional[int]:
    bad = np.flatnonzero(mask)
    return int(bad[0]) if len(bad) else None


def _parse_numeric(frame: pd.DataFrame, column: str, lines: np.ndarray, path, allow_missing: Sequence[str] = ()):
    raw = frame[column].str.strip()
    missing = raw.isin(list(allow_missing)).to_numpy() if allow_missing else np.zeros(len(raw), dtype=bool)
    parsed = pd.to_numeric(raw.where(~missing, None), errors="coerce").to_numpy(dtype=np.float64)
    bad = _first_bad(~missing & ~np.isfinite(parsed))
    if bad is not None:
        raise InputError(f"{path}:{lines[bad]}: invalid {column} value {frame[column].iloc[bad]!r}")
    return np.where(missing, np.nan, parsed)


def _parse_timestamps(frame: pd.DataFrame, column: str, lines: np.ndarray, path) -> list[datetime]:
    raw = frame[column].str.strip().tolist()
    parsed: dict[str, datetime] = {}
    for i, text in enumerate(raw):
        if text in parsed:
            continue
        try:
            parsed[text] = _naive_utc(date_parser.isoparse(text))
        except (ValueError, OverflowError) as e:
            raise InputError(f"{path}:{lines[i]}: invalid timestamp {text!r} ({e})") from e
    return [parsed[text] for text in raw]


def load_table(
    path: str,
    schema: DataSchema,
    exogenous: Sequence[str] = (),
    require_value: bool = True,
) -> RawTable:
    """
    Parse a delimited observation table.

    Args:
        path: Table with a header row
        schema: Column layout
        exogenous: Exogenous covariate columns to read (no missing values allowed)
        require_value: False for query tables without a value column

    Raises:
        InputError: missing file or columns, malformed values (with line number),
            a location with varying coordinates, or a duplicate (location, timestamp)
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(
            path, sep=schema.delimiter, dtype=str, keep_default_na=False, na_filter=False
        )
    except pd.errors.EmptyDataError as e:
        raise InputError(f"{path}: missing header row") from e
    except pd.errors.ParserError as e:
        raise InputError(f"{path}: {e}") from e

    frame.columns = [c.strip() for c in frame.columns]
    required = [schema.location_column, *schema.coordinate_columns, schema.time_column, *exogenous]
    if require_value:
        required.append(schema.value_column)
    missing_columns = [c for c in required if c not in frame.columns]
    if missing_columns:
        raise InputError(f"{path}: missing columns {missing_columns}")

    lines = np.arange(len(frame)) + 2
    clean = pd.DataFrame({schema.location_column: frame[schema.location_column].str.strip()})
    for column in schema.coordinate_columns:
        clean[column] = _parse_numeric(frame, column, lines, path)
    timestamps = _parse_timestamps(frame, schema.time_column, lines, path)
    clean[schema.time_column] = timestamps
    if schema.value_column in frame.columns:
        clean[schema.value_column] = _parse_numeric(
            frame, schema.value_column, lines, path, allow_missing=schema.missing_values
        )
    for column in exogenous:
        clean[column] = _parse_numeric(frame, column, lines, path)

    keys = list(zip(clean[schema.location_column], timestamps))
    seen: dict[tuple, int] = {}
    for i, key in enumerate(keys):
        if key in seen:
            raise InputError(
                f"{path}: duplicate (location, timestamp) ({key[0]}, {key[1].isoformat()}) "
                f"on lines {lines[seen[key]]} and {lines[i]}"
            )
        seen[key] = i

    if len(clean):
        spread = clean.groupby(schema.location_column)[list(schema.coordinate_columns)].nunique()
        varying = spread[(spread > 1).any(axis=1)]
        if len(varying):
            raise InputError(f"{path}: location {varying.index[0]!r} has varying coordinates")

    logger.info(f"Loaded {len(clean)} rows from {path}")
    return RawTable(frame=clean, data_schema=schema, lines=tuple(int(x) for x in lines), exogenous=tuple(exogenous))


def encode(table: RawTable, frequency: Optional[str] = None, origin: Optional[datetime] = None) -> Dataset:
    """
    Convert a table to a Dataset.

    Time is the whole number of frequency units from origin (default: the
    earliest timestamp in the table). Rows with missing values are dropped
    from the records; their locations stay in the registry.
    """
    schema = table.data_schema
    frequency = frequency or schema.frequency
    timestamps = table.timestamps
    d = len(schema.coordinate_columns)
    if not timestamps:
        return Dataset(
            space=np.zeros((0, d)), time=[], values=[], location_index=[],
            location_ids=(), location_coords=np.zeros((0, d)),
            covariates=None if not table.exogenous else np.zeros((0, len(table.exogenous))),
            covariate_names=table.exogenous, origin=origin, frequency=frequency,
        )

    origin = origin or min(timestamps)
    steps_by_timestamp = {ts: time_index(ts, origin, frequency) for ts in set(timestamps)}
    time = np.asarray([steps_by_timestamp[ts] for ts in timestamps], dtype=np.float64)

    ids = table.locations
    coords = table.coordinates
    registry, first, location_index = np.unique(ids, return_index=True, return_inverse=True)

    values = table.values if table.has_values else np.zeros(len(ids))
    observed = ~np.isnan(values)
    covariates = table.covariates
    return Dataset(
        space=coords[observed],
        time=time[observed],
        values=values[observed],
        location_index=location_index.reshape(-1)[observed],
        location_ids=tuple(str(i) for i in registry),
        location_coords=coords[first],
        covariates=None if covariates is None else covariates[observed],
        covariate_names=table.exogenous,
        origin=origin,
        frequency=frequency,
    )


def export_table(dataset: Dataset, schema: DataSchema) -> RawTable:
    """Re-export observed records as a RawTable (inverse of encode, up to row order and missing rows)."""
    if dataset.origin is None or dataset.frequency is None:
        raise InputError("dataset has no time origin/frequency to decode timestamps")
    frame = pd.DataFrame({schema.location_column: [dataset.location_ids[i] for i in dataset.location_index]})
    for k, column in enumerate(schema.coordinate_columns):
        frame[column] = dataset.space[:, k]
    frame[schema.time_column] = [decode_time(dataset.origin, t, dataset.frequency) for t in dataset.time]
    frame[schema.value_column] = dataset.values
    for k, column in enumerate(dataset.covariate_names):
        frame[column] = dataset.covariates[:, k]
    return RawTable(frame=frame, data_schema=schema, exogenous=dataset.covariate_names)


def table_to_text(table: RawTable) -> str:
    """Delimited text of a table; floats keep full precision and missing values are blank."""
    schema = table.data_schema
    frame = table.frame.copy()
    frame[schema.time_column] = format_timestamps(list(frame[schema.time_column]))
    return frame.to_csv(index=False, sep=schema.delimiter, na_rep="", lineterminator="\n")


def write_table(table: RawTable, path: str) -> None:
    atomic_write_text(path, table_to_text(table))
    logger.info(f"Wrote {len(table)} rows to {path}")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _holdout_count(n_observations: int, holdout_fraction: float) -> int:
    return math.ceil(round(holdout_fraction * n_observations, 9))


def plan_splits(dataset: Dataset, n_splits: int, holdout_fraction: float = 0.10, seed: int = 0) -> SplitPlan:
    """Shuffle locations with the seed and partition them into n_splits near-equal groups."""
    if n_splits < 1:
        raise InputError(f"n_splits must be >= 1, got {n_splits}")
    if n_splits > dataset.n_locations:
        raise InputError(f"n_splits={n_splits} exceeds the {dataset.n_locations} locations")
    if not 0 <= holdout_fraction < 1:
        raise InputError(f"holdout_fraction must lie in [0, 1), got {holdout_fraction}")
    order = np.random.default_rng(seed).permutation(dataset.n_locations)
    assignment = {}
    for k, group in enumerate(np.array_split(order, n_splits)):
        for loc in group:
            assignment[dataset.location_ids[int(loc)]] = k
    return SplitPlan(n_splits=n_splits, holdout_fraction=holdout_fraction, assignment=assignment)


def apply_split(dataset: Dataset, plan: SplitPlan, k: int) -> tuple[Dataset, Dataset]:
    """
    Split k: for each location in test partition k, its latest
    ceil(holdout_fraction * n_obs) observations go to test.
    """
    test_mask = np.zeros(len(dataset), dtype=bool)
    for loc_idx, loc_id in enumerate(dataset.location_ids):
        if plan.assignment.get(loc_id) != k:
            continue
        records = np.flatnonzero(dataset.location_index == loc_idx)
        n_test = _holdout_count(len(records), plan.holdout_fraction)
        if n_test == 0:
            continue
        if len(records) < 2:
            logger.warning(f"Location {loc_id} has {len(records)} observation(s); kept in train for split {k}")
            continue
        latest = records[np.argsort(dataset.time[records], kind="stable")][-n_test:]
        test_mask[latest] = True
    return dataset.subset(~test_mask), dataset.subset(test_mask)


def make_splits(
    dataset: Dataset,
    n_splits: int,
    holdout_fraction: float = 0.10,
    seed: int = 0,
) -> list[tuple[Dataset, Dataset]]:
    """Deterministic (train, test) pairs, one per location partition."""
    plan = plan_splits(dataset, n_splits, holdout_fraction, seed)
    return [apply_split(dataset, plan, k) for k in range(n_splits)]
