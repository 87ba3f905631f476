"""
Predictive distributions from a fitted ensemble.

At an index (s, t) each parameter draw gives one component
(F, observation params); the predictive distribution is the equal-weight
mixture of the components. Quantiles invert the mixture CDF numerically
inside the bracket spanned by the component quantiles.
"""

import logging
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import optimize
from scipy.optimize import elementwise

from config import DEFAULT_VI_DRAWS
from errors import CompatibilityError, InputError, NumericalError
from features import build_feature_matrix, feature_count
from inference import PosteriorEnsemble, sample_ensemble
from model import OBSERVATION_BLOCK, ParamVector, forward_batch
from models import FeatureSpec, NetworkConfig, ObservationKind, SpaceTimeIndex, config_hash
from observations import BaseObservation, ObservationParams, get_observation

logger = logging.getLogger(__name__)

CDF_TOLERANCE = 1e-9
QUANTILE_XRTOL = 1e-10
QUANTILE_XATOL = 1e-12
QUANTILE_FATOL = 1e-11
QUANTILE_MAXITER = 200


class PredictiveMixture(BaseModel):
    """
    Equal-weight mixture of observation distributions.

    locations holds F per component; params the derived observation
    parameters per component, shape [M, n_y].
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: ObservationKind
    locations: np.ndarray
    params: np.ndarray

    @field_validator("locations", mode="before")
    @classmethod
    def _as_vector(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        return arr

    @field_validator("params", mode="before")
    @classmethod
    def _as_matrix(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_components(self) -> "PredictiveMixture":
        n_y = get_observation(self.kind).n_y
        if len(self.locations) == 0:
            raise InputError("a predictive mixture needs at least one component")
        if self.params.shape != (len(self.locations), n_y):
            raise InputError(
                f"params shape {self.params.shape}; expected ({len(self.locations)}, {n_y}) for {self.kind}"
            )
        return self

    @classmethod
    def from_components(cls, kind: str, components: Sequence[tuple[float, ObservationParams]]) -> "PredictiveMixture":
        n_y = get_observation(kind).n_y
        return cls(
            kind=kind,
            locations=[F for F, _ in components],
            params=np.asarray([p.values for _, p in components], dtype=np.float64).reshape(len(components), n_y),
        )

    @property
    def head(self) -> BaseObservation:
        return get_observation(self.kind)

    @property
    def size(self) -> int:
        return len(self.locations)

    @property
    def components(self) -> list[tuple[float, ObservationParams]]:
        head = self.head
        return [
            (float(F), ObservationParams(kind=self.kind, names=head.param_names, values=tuple(float(v) for v in p)))
            for F, p in zip(self.locations, self.params)
        ]


def _cdf_values(mix: PredictiveMixture, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return mix.head.cdf(y[..., np.newaxis], mix.locations, mix.params).mean(axis=-1)


def mixture_cdf(mix: PredictiveMixture, y: float) -> float:
    return float(_cdf_values(mix, y))


def mixture_pdf(mix: PredictiveMixture, y: float) -> float:
    """Mixture density; for Poisson the mass, which is 0 off the integers."""
    head = mix.head
    if head.is_discrete and float(y) != np.floor(float(y)):
        logger.warning(f"{mix.kind} mass requested at non-integer y={y}; returning 0")
        return 0.0
    return float(head.pdf(np.asarray(y, dtype=np.float64)[..., np.newaxis], mix.locations, mix.params).mean(axis=-1))


def mixture_mean(mix: PredictiveMixture) -> float:
    return float(np.mean(mix.head.mean(mix.locations, mix.params)))


def _discrete_quantile(mix: PredictiveMixture, alpha: float, lo: float, hi: float) -> float:
    """Smallest integer k with CDF(k) >= alpha; k lies between the component quantiles."""
    k_lo, k_hi = int(np.floor(lo)), int(np.ceil(hi))
    while k_lo < k_hi:
        mid = (k_lo + k_hi) // 2
        if mixture_cdf(mix, mid) >= alpha:
            k_hi = mid
        else:
            k_lo = mid + 1
    return float(k_lo)


def _expanding_bisection(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float) -> float:
    """Bisection after widening [lo, hi] until it brackets a sign change. f must be vectorised."""
    if not (np.isfinite(lo) and np.isfinite(hi)):
        lo, hi = -1.0, 1.0
    if hi <= lo:
        hi = lo + 1.0
    bracket = elementwise.bracket_root(f, lo, hi)
    if not bool(bracket.success):
        raise NumericalError(f"could not bracket the quantile starting from [{lo}, {hi}]")
    xl, xr = (float(x) for x in bracket.bracket)
    return float(optimize.bisect(lambda y: float(f(y)), xl, xr, xtol=1e-14, rtol=1e-15, maxiter=500))


def mixture_quantile(mix: PredictiveMixture, alpha: float) -> float:
    """
    Quantile of the mixture at level alpha in (0, 1).

    Continuous heads: root of CDF(y) - alpha bracketed by the min/max
    component quantiles (Chandrupatla), |CDF(q) - alpha| <= 1e-9.
    Poisson: generalized inverse, CDF(q) >= alpha > CDF(q - 1).
    """
    if not 0 < alpha < 1:
        raise InputError(f"quantile level must lie in (0, 1), got {alpha}")
    head = mix.head
    component_q = head.ppf(alpha, mix.locations, mix.params)
    lo, hi = float(np.min(component_q)), float(np.max(component_q))

    if head.is_discrete:
        return _discrete_quantile(mix, alpha, lo, hi)

    def f(y):
        return _cdf_values(mix, y) - alpha

    if np.isfinite(lo) and np.isfinite(hi):
        if lo == hi:
            return lo
        result = elementwise.find_root(
            f,
            (lo, hi),
            tolerances=dict(xatol=QUANTILE_XATOL, xrtol=QUANTILE_XRTOL, fatol=QUANTILE_FATOL, frtol=0.0),
            maxiter=QUANTILE_MAXITER,
        )
        if bool(result.success) and abs(float(result.f_x)) <= CDF_TOLERANCE:
            return float(result.x)
        logger.debug(f"bracketed root search missed tolerance at alpha={alpha}; bisecting")
    return _expanding_bisection(f, lo, hi)


def mixture_sample(mix: PredictiveMixture, n: int, seed: int = 0) -> np.ndarray:
    """n draws: pick a component uniformly, then sample its observation distribution."""
    rng = np.random.default_rng(seed)
    picks = rng.integers(mix.size, size=n)
    return np.asarray(mix.head.sample(mix.locations[picks], mix.params[picks], rng), dtype=np.float64)


def mixture_expectation(
    mix: PredictiveMixture,
    fn: Callable[[np.ndarray], np.ndarray],
    n_samples: int = 10000,
    seed: int = 0,
) -> float:
    """Monte Carlo estimate of E[fn(Y)] under the mixture."""
    samples = mixture_sample(mix, n_samples, seed)
    return float(np.mean(fn(samples)))


def mixture_interval(mix: PredictiveMixture, level: float = 0.95) -> tuple[float, float]:
    """Central interval holding `level` of the predictive mass."""
    if not 0 < level < 1:
        raise InputError(f"interval level must lie in (0, 1), got {level}")
    tail = (1.0 - level) / 2.0
    return mixture_quantile(mix, tail), mixture_quantile(mix, 1.0 - tail)


# ---------------------------------------------------------------------------
# From an ensemble
# ---------------------------------------------------------------------------

def _resolved_network(config: NetworkConfig, spec: FeatureSpec) -> NetworkConfig:
    if config.m is None:
        return config.model_copy(update={"m": feature_count(spec)})
    return config


def check_compatible(ens: PosteriorEnsemble, config: NetworkConfig, spec: FeatureSpec) -> NetworkConfig:
    """
    Raises:
        CompatibilityError: if (spec, config) is not what the ensemble was fitted with
    """
    network = _resolved_network(config, spec)
    if config_hash(spec, network) != ens.config_hash:
        raise CompatibilityError(
            f"feature/network configuration (hash {config_hash(spec, network)}) does not match "
            f"the ensemble (hash {ens.config_hash})"
        )
    return network


def _component_arrays(
    network: NetworkConfig,
    draws: list[ParamVector],
    X: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    head = get_observation(network.observation.kind)
    F = np.stack([forward_batch(network, draw, X) for draw in draws])
    params = np.stack([head.constrain_np(draw.block(OBSERVATION_BLOCK)) for draw in draws]).reshape(len(draws), head.n_y)
    return F, params


def predictive_at(
    ens: PosteriorEnsemble,
    config: NetworkConfig,
    spec: FeatureSpec,
    idx: SpaceTimeIndex,
    exogenous: Optional[Sequence[float]] = None,
    n_draws: int = DEFAULT_VI_DRAWS,
    seed: int = 0,
) -> PredictiveMixture:
    """Predictive mixture at one index: one component per parameter draw."""
    network = check_compatible(ens, config, spec)
    X = build_feature_matrix(
        spec,
        np.asarray([idx.space], dtype=np.float64),
        np.asarray([idx.time], dtype=np.float64),
        None if exogenous is None else np.asarray([exogenous], dtype=np.float64),
    )
    draws = sample_ensemble(ens, n_draws, seed)
    F, params = _component_arrays(network, draws, X)
    return PredictiveMixture(kind=network.observation.kind, locations=F[:, 0], params=params)


def quantile_column(alpha: float) -> str:
    return f"q{alpha:g}"


def predict_batch(
    ens: PosteriorEnsemble,
    config: NetworkConfig,
    spec: FeatureSpec,
    indices: Sequence[SpaceTimeIndex],
    quantiles: Sequence[float],
    exogenous: Optional[np.ndarray] = None,
    location_ids: Optional[Sequence[str]] = None,
    n_draws: int = DEFAULT_VI_DRAWS,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Predictive mean and quantiles at many indices.

    Returns:
        One row per index: location_id (when given), s1..sd, t, mean, q<alpha>...
        VI draws are taken once per call, so all rows share the same draws.
    """
    bad = [q for q in quantiles if not 0 < q < 1]
    if bad:
        raise InputError(f"quantile levels must lie in (0, 1), got {bad}")
    network = check_compatible(ens, config, spec)

    space = np.asarray([idx.space for idx in indices], dtype=np.float64).reshape(len(indices), spec.d)
    time = np.asarray([idx.time for idx in indices], dtype=np.float64)
    columns: dict[str, object] = {}
    if location_ids is not None:
        if len(location_ids) != len(indices):
            raise InputError(f"{len(location_ids)} location ids for {len(indices)} indices")
        columns["location_id"] = list(location_ids)
    for i in range(spec.d):
        columns[f"s{i + 1}"] = space[:, i]
    columns["t"] = time

    if len(indices) == 0:
        columns["mean"] = np.zeros(0)
        for alpha in quantiles:
            columns[quantile_column(alpha)] = np.zeros(0)
        return pd.DataFrame(columns)

    X = build_feature_matrix(spec, space, time, exogenous)
    draws = sample_ensemble(ens, n_draws, seed)
    F, params = _component_arrays(network, draws, X)

    means = np.empty(len(indices))
    qs = np.empty((len(indices), len(quantiles)))
    for j in range(len(indices)):
        mix = PredictiveMixture(kind=network.observation.kind, locations=F[:, j], params=params)
        means[j] = mixture_mean(mix)
        for k, alpha in enumerate(quantiles):
            qs[j, k] = mixture_quantile(mix, alpha)

    columns["mean"] = means
    for k, alpha in enumerate(quantiles):
        columns[quantile_column(alpha)] = qs[:, k]
    logger.info(f"Predicted {len(indices)} indices with {len(draws)} components each")
    return pd.DataFrame(columns)
