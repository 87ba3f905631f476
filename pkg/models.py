"""
Pydantic models for the BayesNF toolkit.
Defines the declarative configuration blocks (data schema, features,
network, training, prediction, variogram, paths) and the run configuration
that ties them together.
"""

import hashlib
import json
import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import config

ActivationName = Literal["tanh", "relu", "elu"]
ObservationKind = Literal["Normal", "StudentT", "Poisson"]
InferenceMethod = Literal["MAP", "VI", "MLE"]
Frequency = Literal[
    "Yearly", "Quarterly", "Monthly", "Weekly",
    "Daily", "Hourly", "Minutely", "Secondly",
]

OBSERVATION_PARAM_COUNTS = {"Normal": 1, "StudentT": 2, "Poisson": 0}


class SpaceTimeIndex(BaseModel):
    """A point (s, t): d spatial coordinates plus a scalar time."""
    model_config = ConfigDict(frozen=True)

    space: tuple[float, ...] = Field(min_length=1, description="Spatial coordinates s_1..s_d")
    time: float = Field(description="Time in units of the measurement frequency")

    @field_validator("space")
    @classmethod
    def _finite_space(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(c) for c in v):
            raise ValueError(f"space coordinates must be finite, got {v}")
        return v

    @field_validator("time")
    @classmethod
    def _finite_time(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError(f"time must be finite, got {v}")
        return v

    @property
    def d(self) -> int:
        return len(self.space)


class SeasonalTerm(BaseModel):
    """A temporal seasonal component: period p and its harmonic set."""
    model_config = ConfigDict(frozen=True)

    period: float = Field(gt=0, description="Period in units of the measurement frequency")
    harmonics: tuple[int, ...] = Field(default=(), description="Harmonics h with 1 <= h <= floor(p/2)")

    @field_validator("harmonics")
    @classmethod
    def _sorted_harmonics(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(sorted(set(v)))

    @model_validator(mode="after")
    def _check_harmonics(self) -> "SeasonalTerm":
        limit = math.floor(self.period / 2)
        bad = [h for h in self.harmonics if h < 1 or h > limit]
        if bad:
            raise ValueError(f"harmonics {bad} outside [1, {limit}] for period {self.period}")
        return self


class FeatureSpec(BaseModel):
    """Which covariates make up x(s, t), in a fixed order."""
    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=1, description="Spatial dimension")
    use_linear: bool = True
    use_time_space_interactions: bool = False
    use_space_space_interactions: bool = False
    seasonal: tuple[SeasonalTerm, ...] = ()
    spatial_fourier: tuple[tuple[int, ...], ...] = Field(
        default=(), description="Per spatial dimension, dyadic harmonic set H^s_i (empty: none)"
    )
    spatial_bounds: Optional[tuple[tuple[float, float], ...]] = Field(
        default=None, description="Per-dimension (min, max) used to normalize s to [0, 1]"
    )
    exogenous: tuple[str, ...] = Field(default=(), description="Exogenous covariate columns appended to x")

    @field_validator("spatial_fourier")
    @classmethod
    def _sorted_fourier(cls, v: tuple[tuple[int, ...], ...]) -> tuple[tuple[int, ...], ...]:
        out = tuple(tuple(sorted(set(hs))) for hs in v)
        for hs in out:
            if any(h < 0 for h in hs):
                raise ValueError(f"spatial Fourier harmonics must be >= 0, got {hs}")
        return out

    @field_validator("exogenous")
    @classmethod
    def _unique_exogenous(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(v)) != len(v):
            raise ValueError(f"duplicate exogenous columns: {v}")
        return v

    @model_validator(mode="after")
    def _check_dimensions(self) -> "FeatureSpec":
        if self.spatial_fourier and len(self.spatial_fourier) != self.d:
            raise ValueError(
                f"spatial_fourier has {len(self.spatial_fourier)} entries, expected d={self.d}"
            )
        if self.spatial_bounds is not None:
            if len(self.spatial_bounds) != self.d:
                raise ValueError(
                    f"spatial_bounds has {len(self.spatial_bounds)} entries, expected d={self.d}"
                )
            for low, high in self.spatial_bounds:
                if not (math.isfinite(low) and math.isfinite(high)) or low >= high:
                    raise ValueError(f"invalid spatial bounds ({low}, {high})")
        return self

    @property
    def has_spatial_fourier(self) -> bool:
        return any(len(hs) > 0 for hs in self.spatial_fourier)


class ObservationModel(BaseModel):
    """Observation family. n_y is the number of global observation parameters."""
    model_config = ConfigDict(frozen=True)

    kind: ObservationKind = "Normal"

    @property
    def n_y(self) -> int:
        return OBSERVATION_PARAM_COUNTS[self.kind]


class NetworkConfig(BaseModel):
    """Architecture of the field network."""
    model_config = ConfigDict(frozen=True)

    widths: tuple[int, ...] = Field(default=(64, 64), description="Hidden widths N^1..N^L")
    activations: tuple[tuple[ActivationName, ...], ...] = (("tanh", "elu"), ("tanh", "elu"))
    m: Optional[int] = Field(default=None, ge=1, description="Input covariate count")
    observation: ObservationModel = ObservationModel()
    use_scaling_layer: bool = True

    @model_validator(mode="after")
    def _check_layers(self) -> "NetworkConfig":
        if any(w < 1 for w in self.widths):
            raise ValueError(f"hidden widths must be positive, got {self.widths}")
        if len(self.activations) != len(self.widths):
            raise ValueError(
                f"{len(self.activations)} activation sets for {len(self.widths)} hidden layers"
            )
        for layer, names in enumerate(self.activations, start=1):
            if not names:
                raise ValueError(f"hidden layer {layer} has no activations")
        return self

    @property
    def L(self) -> int:
        return len(self.widths)


class LearningRateSchedule(BaseModel):
    """Linear warmup to peak_rate, then constant or cosine decay."""
    model_config = ConfigDict(frozen=True)

    peak_rate: float = Field(default=5e-3, gt=0)
    warmup_fraction: float = Field(default=0.1, ge=0, lt=1)
    decay: Literal["constant", "cosine"] = "cosine"


class TrainConfig(BaseModel):
    """Training procedure for one ensemble."""
    model_config = ConfigDict(frozen=True)

    method: InferenceMethod = "MAP"
    ensemble_size: int = Field(default=8, ge=1)
    epochs: Optional[int] = Field(
        default=None, ge=0, description="None sizes epochs to about BAYESNF_TARGET_STEPS steps"
    )
    batch_size: int = Field(default=512, ge=1)
    learning_rate: LearningRateSchedule = LearningRateSchedule()
    seed: int = Field(default=0, ge=0)
    vi_samples_per_step: int = Field(default=1, ge=1)
    vi_init_stddev: float = Field(default=0.01, gt=0)
    kl_scale_mode: Literal["uniform", "geometric"] = "uniform"
    objective_every: int = Field(default=100, ge=1, description="Steps between full-data objective records")


class PredictionConfig(BaseModel):
    """Quantile levels and draw counts for predictive summaries."""
    model_config = ConfigDict(frozen=True)

    quantiles: tuple[float, ...] = (0.025, 0.5, 0.975)
    n_draws: int = Field(default_factory=lambda: config.DEFAULT_VI_DRAWS, ge=1)
    seed: int = Field(default=0, ge=0)

    @field_validator("quantiles")
    @classmethod
    def _open_unit_interval(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        bad = [q for q in v if not 0 < q < 1]
        if bad:
            raise ValueError(f"quantile levels must lie in (0, 1), got {bad}")
        return v


class VariogramSpec(BaseModel):
    """Distance bins, time lags and distance metric for variogram surfaces."""
    model_config = ConfigDict(frozen=True)

    distance_bins: tuple[float, ...] = tuple(float(e) for e in range(0, 1001, 100))
    time_lags: tuple[int, ...] = tuple(range(0, 11))
    distance_metric: Literal["euclidean", "haversine"] = "haversine"
    min_pairs_per_bin: int = Field(default=30, ge=1)
    inferred_draws: int = Field(default=8, ge=1, description="Parameter draws averaged by inferred surfaces")

    @field_validator("distance_bins")
    @classmethod
    def _increasing_edges(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if len(v) < 2:
            raise ValueError("distance_bins needs at least two edges")
        if v[0] < 0 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"distance_bins must be nonnegative and strictly increasing, got {v}")
        return v

    @field_validator("time_lags")
    @classmethod
    def _nonnegative_lags(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if not v or any(lag < 0 for lag in v):
            raise ValueError(f"time_lags must be a nonempty set of nonnegative integers, got {v}")
        return tuple(sorted(set(v)))


class DataSchema(BaseModel):
    """Column layout of a delimited observation table."""
    model_config = ConfigDict(frozen=True)

    path: Optional[str] = None
    location_column: str = "location"
    coordinate_columns: tuple[str, ...] = ("lon", "lat")
    time_column: str = "timestamp"
    value_column: str = "value"
    delimiter: str = ","
    missing_values: tuple[str, ...] = ("", "NA")
    frequency: Frequency = "Daily"
    origin: Optional[str] = Field(default=None, description="Start timestamp for simulated tables")
    holdout_fraction: float = Field(default=0.10, ge=0, lt=1)
    split_seed: int = Field(default=0, ge=0)


class PathsConfig(BaseModel):
    """Output locations."""
    model_config = ConfigDict(frozen=True)

    checkpoint_dir: str = Field(default_factory=lambda: config.CHECKPOINT_DIR)
    output_dir: str = Field(default_factory=lambda: config.OUTPUT_DIR)


class RunConfig(BaseModel):
    """Complete configuration of a run, as read from a JSON config file."""

    data: DataSchema = DataSchema()
    features: FeatureSpec = FeatureSpec(d=2)
    network: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig()
    prediction: PredictionConfig = Field(default_factory=PredictionConfig)
    variogram: VariogramSpec = VariogramSpec()
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        from features import feature_count

        if len(self.data.coordinate_columns) != self.features.d:
            raise ValueError(
                f"{len(self.data.coordinate_columns)} coordinate columns for d={self.features.d}"
            )
        m = feature_count(self.features)
        if m < 1:
            raise ValueError("feature specification yields no covariates")
        if self.network.m is None:
            self.network = self.network.model_copy(update={"m": m})
        elif self.network.m != m:
            raise ValueError(
                f"network.m={self.network.m} does not match the {m} covariates of the feature spec"
            )
        return self


def config_hash(features: FeatureSpec, network: NetworkConfig) -> str:
    """
    Stable hash of the blocks that determine the parameter layout and feature map.

    Returns:
        First 16 hex chars of the sha256 of the canonical JSON encoding
    """
    payload = json.dumps(
        {
            "features": features.model_dump(mode="json"),
            "network": network.model_dump(mode="json"),
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
