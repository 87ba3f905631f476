"""
Bayesian Neural Field network: parameter layout, prior, forward pass and
log joint density.

The field F(s, t) is a feedforward network over the covariates x(s, t):
a per-covariate log-scale layer, L hidden layers whose output is a
softmax-weighted mix of activations, and a scalar output layer. Weights of
each layer have a Normal(0, softplus(xi)) prior with a learned xi, and all
parameters live in one flat vector with a fixed block layout.

Densities and gradients are computed in float64 torch so gradients are
exact reverse-mode derivatives.
"""

import logging
import math
from typing import Literal, Optional, Sequence, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from torch.distributions import Normal

from errors import CompatibilityError, InputError, NumericalError
from features import FeatureVector, build_feature_matrix
from models import FeatureSpec, NetworkConfig, ObservationModel, SpaceTimeIndex
from observations import BaseObservation, ObservationParams, get_observation, softplus, softplus_np

logger = logging.getLogger(__name__)

torch.set_default_dtype(torch.float64)

_ACTIVATIONS = {
    "tanh": torch.tanh,
    "relu": torch.relu,
    "elu": torch.nn.functional.elu,
}

OBSERVATION_BLOCK = "obs"


class ParamBlock(BaseModel):
    """A named contiguous slice of the flat parameter vector."""
    model_config = ConfigDict(frozen=True)

    name: str
    start: int
    stop: int
    shape: tuple[int, ...]
    prior: Literal["standard", "scaled"]
    layer: int

    @property
    def size(self) -> int:
        return self.stop - self.start


class ParamLayout(BaseModel):
    """Ordered, disjoint blocks covering [0, size)."""
    model_config = ConfigDict(frozen=True)

    blocks: tuple[ParamBlock, ...]
    size: int

    def block(self, name: str) -> ParamBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise CompatibilityError(f"parameter layout has no block {name!r}")

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.blocks]


def _require_m(config: NetworkConfig) -> int:
    if config.m is None:
        raise CompatibilityError("NetworkConfig.m is unset; derive it from the FeatureSpec first")
    return config.m


def build_layout(config: NetworkConfig) -> ParamLayout:
    """
    Lay out parameter blocks for a network.

    Order: xi0 [m], then per layer l = 1..L+1: xi_l [1], gamma_l [A_l]
    (hidden layers only), omega_l [N_l, N_{l-1}], beta_l [N_l]; finally
    the observation block [n_y]. With the scaling layer disabled xi0 is empty.
    """
    m = _require_m(config)
    blocks = []
    cursor = 0

    def add(name: str, shape: tuple[int, ...], prior: str, layer: int) -> None:
        nonlocal cursor
        size = int(np.prod(shape)) if shape else 0
        blocks.append(ParamBlock(name=name, start=cursor, stop=cursor + size, shape=shape, prior=prior, layer=layer))
        cursor += size

    add("xi0", (m if config.use_scaling_layer else 0,), "standard", 0)
    widths = [m, *config.widths, 1]
    for layer in range(1, config.L + 2):
        add(f"xi{layer}", (1,), "standard", layer)
        if layer <= config.L:
            add(f"gamma{layer}", (len(config.activations[layer - 1]),), "standard", layer)
        add(f"omega{layer}", (widths[layer], widths[layer - 1]), "scaled", layer)
        add(f"beta{layer}", (widths[layer],), "scaled", layer)
    add(OBSERVATION_BLOCK, (config.observation.n_y,), "standard", -1)

    return ParamLayout(blocks=tuple(blocks), size=cursor)


class ParamVector(BaseModel):
    """Immutable flat parameter vector together with its layout."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    layout: ParamLayout

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_size(self) -> "ParamVector":
        if len(self.values) != self.layout.size:
            raise CompatibilityError(
                f"parameter vector has {len(self.values)} entries; layout expects {self.layout.size}"
            )
        return self

    def block(self, name: str) -> np.ndarray:
        b = self.layout.block(name)
        return self.values[b.start:b.stop].reshape(b.shape)

    def with_block(self, name: str, values) -> "ParamVector":
        """Copy with one block replaced."""
        b = self.layout.block(name)
        updated = np.array(self.values)
        updated[b.start:b.stop] = np.asarray(values, dtype=np.float64).reshape(-1)
        return ParamVector(values=updated, layout=self.layout)

    def __len__(self) -> int:
        return len(self.values)


# ---------------------------------------------------------------------------
# Torch building blocks (shared by inference)
# ---------------------------------------------------------------------------

def unpack(layout: ParamLayout, theta: torch.Tensor) -> dict[str, torch.Tensor]:
    return {b.name: theta[b.start:b.stop].reshape(b.shape) for b in layout.blocks}


def forward_tensor(
    config: NetworkConfig,
    layout: ParamLayout,
    theta: torch.Tensor,
    X: torch.Tensor,
    check_finite: bool = False,
) -> torch.Tensor:
    """Field values F for rows of X [n, m]; differentiable in theta."""
    blocks = unpack(layout, theta)
    h = X * torch.exp(blocks["xi0"]) if config.use_scaling_layer else X
    widths = [config.m, *config.widths]
    z = h
    for layer in range(1, config.L + 2):
        z = h @ blocks[f"omega{layer}"].T / math.sqrt(widths[layer - 1]) + blocks[f"beta{layer}"]
        if layer <= config.L:
            weights = torch.softmax(blocks[f"gamma{layer}"], dim=0)
            h = sum(
                weights[j] * _ACTIVATIONS[name](z)
                for j, name in enumerate(config.activations[layer - 1])
            )
            if check_finite and not bool(torch.isfinite(h).all()):
                raise NumericalError(f"non-finite activation at layer {layer}")
    if check_finite and not bool(torch.isfinite(z).all()):
        raise NumericalError(f"non-finite field value at output layer {config.L + 1}")
    return z[:, 0]


def log_prior_tensor(layout: ParamLayout, theta: torch.Tensor) -> torch.Tensor:
    """Log prior density: standard blocks ~ N(0, 1); omega/beta ~ N(0, softplus(xi_l))."""
    total = theta.new_zeros(())
    standard = Normal(theta.new_zeros(()), theta.new_ones(()), validate_args=False)
    for b in layout.blocks:
        if b.size == 0:
            continue
        values = theta[b.start:b.stop]
        if b.prior == "standard":
            total = total + standard.log_prob(values).sum()
        else:
            xi = layout.block(f"xi{b.layer}")
            sigma = softplus(theta[xi.start])
            total = total + Normal(theta.new_zeros(()), sigma, validate_args=False).log_prob(values).sum()
    return total


def log_likelihood_tensor(
    config: NetworkConfig,
    layout: ParamLayout,
    head: BaseObservation,
    theta: torch.Tensor,
    X: torch.Tensor,
    y: torch.Tensor,
) -> torch.Tensor:
    """Sum of log p(y_i | F(x_i), observation params) over rows."""
    if len(y) == 0:
        return theta.new_zeros(())
    F = forward_tensor(config, layout, theta, X)
    obs = layout.block(OBSERVATION_BLOCK)
    derived = head.constrain(theta[obs.start:obs.stop])
    return head.log_prob(F, y, derived).sum()


def objective_tensor(
    config: NetworkConfig,
    layout: ParamLayout,
    head: BaseObservation,
    theta: torch.Tensor,
    X: torch.Tensor,
    y: torch.Tensor,
    scale: float = 1.0,
    include_prior: bool = True,
) -> torch.Tensor:
    """log prior (optional) + scale * minibatch log-likelihood."""
    objective = scale * log_likelihood_tensor(config, layout, head, theta, X, y)
    if include_prior:
        objective = objective + log_prior_tensor(layout, theta)
    return objective


def _as_tensor(values) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values, dtype=np.float64))


def _check_features(config: NetworkConfig, features: np.ndarray, n_rows: int) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != config.m:
        raise InputError(f"feature matrix has shape {features.shape}; expected (n, {config.m})")
    if features.shape[0] != n_rows:
        raise InputError(f"{features.shape[0]} feature rows for {n_rows} observations")
    return features


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def init_params(config: NetworkConfig, seed: int) -> ParamVector:
    """
    Draw a parameter vector from the prior.

    Blocks are drawn in layout order from one seeded generator, so the
    result is a pure function of (config, seed).
    """
    layout = build_layout(config)
    rng = np.random.default_rng(seed)
    values = np.empty(layout.size, dtype=np.float64)
    for b in layout.blocks:
        if b.size == 0:
            continue
        if b.prior == "standard":
            values[b.start:b.stop] = rng.standard_normal(b.size)
        else:
            xi = layout.block(f"xi{b.layer}")
            sigma = float(softplus_np(values[xi.start]))
            values[b.start:b.stop] = rng.normal(0.0, sigma, b.size)
    return ParamVector(values=values, layout=layout)


def forward_batch(config: NetworkConfig, params: ParamVector, X) -> np.ndarray:
    """Field values for rows of X [n, m]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != config.m:
        raise InputError(f"feature matrix has shape {X.shape}; expected (n, {config.m})")
    with torch.no_grad():
        F = forward_tensor(config, params.layout, _as_tensor(params.values), _as_tensor(X), check_finite=True)
    return F.numpy().copy()


def forward(config: NetworkConfig, params: ParamVector, x: Union[FeatureVector, Sequence[float]]) -> float:
    """Field value F at one covariate vector."""
    values = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if len(values) != config.m:
        raise InputError(f"covariate vector has {len(values)} entries; network expects m={config.m}")
    return float(forward_batch(config, params, values.reshape(1, -1))[0])


def activation_weights(params: ParamVector, layer: int) -> np.ndarray:
    """Softmax mixing weights of a hidden layer's activations."""
    with torch.no_grad():
        return torch.softmax(_as_tensor(params.block(f"gamma{layer}")), dim=0).numpy().copy()


def observation_params(config: NetworkConfig, params: ParamVector) -> ObservationParams:
    head = get_observation(config.observation.kind)
    return head.params_from_raw(params.block(OBSERVATION_BLOCK))


def log_likelihood(obs_model: ObservationModel, obs_params: ObservationParams, F: float, y: float) -> float:
    """log p(y | F, observation params) for a single observation."""
    head = get_observation(obs_model.kind)
    if obs_params.kind != obs_model.kind:
        raise CompatibilityError(f"{obs_params.kind} parameters given for a {obs_model.kind} head")
    head.validate_targets(np.asarray([y]))
    with torch.no_grad():
        value = head.log_prob(_as_tensor([F]), _as_tensor([y]), _as_tensor(obs_params.as_array()))
    return float(value[0])


def log_prior(config: NetworkConfig, params: ParamVector) -> float:
    with torch.no_grad():
        return float(log_prior_tensor(params.layout, _as_tensor(params.values)))


def log_joint(config: NetworkConfig, params: ParamVector, dataset, features) -> float:
    """
    log prior + sum of log-likelihood over the records of dataset.

    Args:
        config: Network configuration (m set)
        params: Parameter vector
        dataset: Dataset; its values are the targets
        features: [N, m] covariates aligned with dataset records
    """
    y = np.asarray(dataset.values, dtype=np.float64)
    features = _check_features(config, features, len(y))
    head = get_observation(config.observation.kind)
    head.validate_targets(y)
    with torch.no_grad():
        value = objective_tensor(
            config, params.layout, head, _as_tensor(params.values), _as_tensor(features), _as_tensor(y)
        )
    return float(value)


def log_joint_grad(
    config: NetworkConfig,
    params: ParamVector,
    minibatch,
    features,
    scale: float,
    include_prior: bool = True,
) -> np.ndarray:
    """
    Gradient of log prior + scale * minibatch log-likelihood.

    include_prior=False gives the gradient of the maximum-likelihood objective.

    Raises:
        NumericalError: if any gradient entry is non-finite
    """
    y = np.asarray(minibatch.values, dtype=np.float64)
    features = _check_features(config, features, len(y))
    head = get_observation(config.observation.kind)
    head.validate_targets(y)

    theta = _as_tensor(params.values).clone().requires_grad_(True)
    objective = objective_tensor(
        config, params.layout, head, theta, _as_tensor(features), _as_tensor(y),
        scale=scale, include_prior=include_prior,
    )
    objective.backward()
    grad = theta.grad.numpy().copy()
    if not np.all(np.isfinite(grad)):
        bad = [b.name for b in params.layout.blocks if not np.all(np.isfinite(grad[b.start:b.stop]))]
        raise NumericalError(f"non-finite gradient in blocks {bad}")
    return grad


def log_prior_grad(config: NetworkConfig, params: ParamVector) -> np.ndarray:
    theta = _as_tensor(params.values).clone().requires_grad_(True)
    log_prior_tensor(params.layout, theta).backward()
    return theta.grad.numpy().copy()


def simulate_field(
    config: NetworkConfig,
    seed: int,
    indices: Sequence[SpaceTimeIndex],
    spec: FeatureSpec,
    exogenous: Optional[np.ndarray] = None,
) -> list:
    """
    Draw one field from the prior and sample an observation at each index.

    Parameters come from init_params(config, seed); observation noise uses
    an independent stream derived from the same seed.
    """
    params = init_params(config, seed)
    if not indices:
        return []
    space = np.asarray([idx.space for idx in indices], dtype=np.float64)
    time = np.asarray([idx.time for idx in indices], dtype=np.float64)
    X = build_feature_matrix(spec, space, time, exogenous)
    F = forward_batch(config, params, X)

    head = get_observation(config.observation.kind)
    derived = head.constrain_np(params.block(OBSERVATION_BLOCK))
    noise_rng = np.random.default_rng([seed, 1])
    y = head.sample(F, np.broadcast_to(derived, (len(F), head.n_y)), noise_rng)
    return np.asarray(y).tolist()
