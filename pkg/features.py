"""
Covariate construction for spatiotemporal indices.

Builds the fixed covariate vector x(s, t) from a declarative FeatureSpec:
linear terms, time-space and space-space interactions, temporal seasonal
(cos, sin) pairs, dyadic spatial Fourier pairs, and a trailing block of
exogenous columns. The ordering is a pure function of the FeatureSpec so
parameter layouts are reproducible across runs.
"""

import logging
import math
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from errors import InputError
from models import FeatureSpec, SeasonalTerm, SpaceTimeIndex

logger = logging.getLogger(__name__)

FREQUENCIES = ("Yearly", "Quarterly", "Monthly", "Weekly", "Daily", "Hourly", "Minutely", "Secondly")
SEASONAL_EFFECTS = ("Secondly", "Minutely", "Hourly", "Daily", "Weekly", "Monthly", "Quarterly", "Yearly")

# Period of each seasonal effect in units of the measurement frequency.
# Effects shorter than the sampling interval are undefined.
SEASONAL_PERIODS: dict[str, dict[str, float]] = {
    "Yearly": {"Yearly": 1},
    "Quarterly": {"Quarterly": 1, "Yearly": 4},
    "Monthly": {"Monthly": 1, "Quarterly": 3, "Yearly": 12},
    "Weekly": {"Weekly": 1, "Monthly": 4.35, "Quarterly": 13.045, "Yearly": 52.18},
    "Daily": {"Daily": 1, "Weekly": 7, "Monthly": 30.44, "Quarterly": 91.32, "Yearly": 365.25},
    "Hourly": {
        "Hourly": 1, "Daily": 24, "Weekly": 168, "Monthly": 730.5,
        "Quarterly": 2191.5, "Yearly": 8766,
    },
    "Minutely": {
        "Minutely": 1, "Hourly": 60, "Daily": 1440, "Weekly": 10080,
        "Monthly": 43830, "Quarterly": 131490, "Yearly": 525960,
    },
    "Secondly": {
        "Secondly": 1, "Minutely": 60, "Hourly": 3600, "Daily": 86400, "Weekly": 604800,
        "Monthly": 2629800, "Quarterly": 7889400, "Yearly": 31557600,
    },
}

MAX_DEFAULT_HARMONICS = 4


class FeatureVector(BaseModel):
    """Covariate values x(s, t) with their labels, in FeatureSpec order."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    names: tuple[str, ...]

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_length(self) -> "FeatureVector":
        if len(self.values) != len(self.names):
            raise ValueError(f"{len(self.values)} values for {len(self.names)} names")
        return self

    def __len__(self) -> int:
        return len(self.values)


def seasonal_period(frequency: str, effect: str) -> Optional[float]:
    """
    Look up the period of a seasonal effect at a measurement frequency.

    Returns:
        Period in frequency units, or None where the effect is undefined
    """
    if frequency not in SEASONAL_PERIODS:
        raise InputError(f"unknown frequency {frequency!r}; expected one of {FREQUENCIES}")
    if effect not in SEASONAL_EFFECTS:
        raise InputError(f"unknown seasonal effect {effect!r}; expected one of {SEASONAL_EFFECTS}")
    return SEASONAL_PERIODS[frequency].get(effect)


def feature_count(spec: FeatureSpec) -> int:
    """Number of covariates m implied by a FeatureSpec."""
    d = spec.d
    count = 0
    if spec.use_linear:
        count += 1 + d
    if spec.use_time_space_interactions:
        count += d
    if spec.use_space_space_interactions:
        count += d * (d - 1) // 2
    count += 2 * sum(len(term.harmonics) for term in spec.seasonal)
    count += 2 * sum(len(hs) for hs in spec.spatial_fourier)
    count += len(spec.exogenous)
    return count


def _format_number(x: float) -> str:
    return f"{x:g}"


def feature_names(spec: FeatureSpec) -> list[str]:
    """Labels of the covariates, aligned with build_feature_matrix columns."""
    d = spec.d
    names = []
    if spec.use_linear:
        names.append("t")
        names.extend(f"s{i + 1}" for i in range(d))
    if spec.use_time_space_interactions:
        names.extend(f"t*s{i + 1}" for i in range(d))
    if spec.use_space_space_interactions:
        names.extend(f"s{i + 1}*s{j + 1}" for i in range(d) for j in range(i + 1, d))
    for term in spec.seasonal:
        p = _format_number(term.period)
        for h in term.harmonics:
            names.append(f"cos(t;p={p},h={h})")
            names.append(f"sin(t;p={p},h={h})")
    for i, hs in enumerate(spec.spatial_fourier):
        for h in hs:
            names.append(f"cos(s{i + 1};h={h})")
            names.append(f"sin(s{i + 1};h={h})")
    names.extend(spec.exogenous)
    return names


def normalize_space(spec: FeatureSpec, space: np.ndarray) -> np.ndarray:
    """Map coordinates to [0, 1] per dimension using spec.spatial_bounds."""
    if spec.spatial_bounds is None:
        raise InputError("spatial Fourier features require spatial_bounds on the FeatureSpec")
    bounds = np.asarray(spec.spatial_bounds, dtype=np.float64)
    return (space - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])


def _validated_inputs(
    spec: FeatureSpec,
    space: np.ndarray,
    time: np.ndarray,
    exogenous: Optional[np.ndarray],
) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    space = np.asarray(space, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64).reshape(-1)
    if space.ndim == 1:
        space = space.reshape(len(time), -1) if len(time) else space.reshape(0, spec.d)
    if space.ndim != 2 or space.shape[1] != spec.d:
        raise InputError(f"space has shape {space.shape}; expected (n, {spec.d})")
    if space.shape[0] != len(time):
        raise InputError(f"{space.shape[0]} spatial rows for {len(time)} times")
    if not (np.all(np.isfinite(space)) and np.all(np.isfinite(time))):
        raise InputError("space and time coordinates must be finite")

    k = len(spec.exogenous)
    if k == 0:
        return space, time, None
    if exogenous is None:
        raise InputError(f"exogenous covariates {spec.exogenous} are required")
    exogenous = np.asarray(exogenous, dtype=np.float64).reshape(len(time), -1)
    if exogenous.shape[1] != k:
        raise InputError(f"exogenous block has {exogenous.shape[1]} columns; expected {k}")
    if not np.all(np.isfinite(exogenous)):
        raise InputError("exogenous covariates must be finite")
    return space, time, exogenous


def build_feature_matrix(
    spec: FeatureSpec,
    space: np.ndarray,
    time: np.ndarray,
    exogenous: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Build covariates for many indices at once.

    Args:
        spec: Feature specification
        space: [n, d] spatial coordinates
        time: [n] times in frequency units
        exogenous: [n, k] exogenous values when spec.exogenous is nonempty

    Returns:
        [n, m] float64 covariate matrix
    """
    space, time, exogenous = _validated_inputs(spec, space, time, exogenous)
    n, d = space.shape
    columns: list[np.ndarray] = []

    if spec.use_linear:
        columns.append(time)
        columns.extend(space[:, i] for i in range(d))
    if spec.use_time_space_interactions:
        columns.extend(time * space[:, i] for i in range(d))
    if spec.use_space_space_interactions:
        columns.extend(space[:, i] * space[:, j] for i in range(d) for j in range(i + 1, d))

    for term in spec.seasonal:
        for h in term.harmonics:
            angle = 2.0 * np.pi * h * time / term.period
            columns.append(np.cos(angle))
            columns.append(np.sin(angle))

    if spec.has_spatial_fourier:
        unit = normalize_space(spec, space)
        for i, hs in enumerate(spec.spatial_fourier):
            for h in hs:
                angle = 2.0 * np.pi * (2.0 ** h) * unit[:, i]
                columns.append(np.cos(angle))
                columns.append(np.sin(angle))

    if exogenous is not None:
        columns.extend(exogenous[:, k] for k in range(exogenous.shape[1]))

    if not columns:
        return np.zeros((n, 0), dtype=np.float64)
    return np.column_stack(columns)


def build_features(
    spec: FeatureSpec,
    idx: SpaceTimeIndex,
    exogenous: Optional[Sequence[float]] = None,
) -> FeatureVector:
    """Build the covariate vector x(s, t) for a single index."""
    if idx.d != spec.d:
        raise InputError(f"index has {idx.d} spatial coordinates; FeatureSpec expects d={spec.d}")
    row = build_feature_matrix(
        spec,
        np.asarray([idx.space], dtype=np.float64),
        np.asarray([idx.time], dtype=np.float64),
        None if exogenous is None else np.asarray([exogenous], dtype=np.float64),
    )
    return FeatureVector(values=row[0], names=tuple(feature_names(spec)))


def spatial_bounds_from(space: np.ndarray) -> tuple[tuple[float, float], ...]:
    """Per-dimension (min, max) of coordinates; degenerate dimensions widen by 0.5 each side."""
    space = np.asarray(space, dtype=np.float64)
    if space.ndim != 2 or space.shape[0] == 0:
        raise InputError("cannot derive spatial bounds from an empty coordinate set")
    bounds = []
    for low, high in zip(space.min(axis=0), space.max(axis=0)):
        low, high = float(low), float(high)
        if low == high:
            low, high = low - 0.5, high + 0.5
        bounds.append((low, high))
    return tuple(bounds)


def resolve_feature_spec(spec: FeatureSpec, space: np.ndarray) -> FeatureSpec:
    """Fill spatial_bounds from coordinates when Fourier features need them and none are set."""
    if not spec.has_spatial_fourier or spec.spatial_bounds is not None:
        return spec
    bounds = spatial_bounds_from(space)
    logger.info(f"Spatial bounds derived from data: {bounds}")
    return spec.model_copy(update={"spatial_bounds": bounds})


def default_feature_spec(
    d: int,
    frequency: str,
    effects: Iterable[str] = (),
    spatial_harmonics: Sequence[int] = (),
    use_time_space_interactions: bool = False,
    use_space_space_interactions: bool = False,
) -> FeatureSpec:
    """
    Build a FeatureSpec with seasonal terms for the named effects.

    Each effect gets harmonics 1..min(4, floor(p/2)). Effects undefined at the
    frequency, or with period below 2, are skipped with a warning.
    """
    seasonal = []
    for effect in effects:
        period = seasonal_period(frequency, effect)
        limit = 0 if period is None else min(MAX_DEFAULT_HARMONICS, math.floor(period / 2))
        if limit < 1:
            logger.warning(f"Seasonal effect {effect} has no harmonics at {frequency} frequency; skipped")
            continue
        seasonal.append(SeasonalTerm(period=period, harmonics=tuple(range(1, limit + 1))))

    spatial_fourier = tuple(tuple(spatial_harmonics) for _ in range(d)) if spatial_harmonics else ()
    return FeatureSpec(
        d=d,
        use_time_space_interactions=use_time_space_interactions,
        use_space_space_interactions=use_space_space_interactions,
        seasonal=tuple(seasonal),
        spatial_fourier=spatial_fourier,
    )
