"""
Posterior inference for Bayesian Neural Fields.

Fits ensembles of parameter vectors by stochastic MAP estimation, maximum
likelihood (the same procedure with the prior removed) or mean-field
variational inference, and draws parameter samples from a fitted ensemble.

Every member is trained from its own seed derived from TrainConfig.seed,
with Adam on minibatches and a warmup + cosine learning-rate schedule.
Results are a pure function of (config, data, seed).
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from torch.distributions import Normal, kl_divergence

from config import MAX_WORKERS, TARGET_TOTAL_STEPS
from errors import CompatibilityError, InputError, NumericalError
from features import build_feature_matrix, resolve_feature_spec
from model import (
    ParamLayout,
    ParamVector,
    build_layout,
    init_params,
    log_likelihood_tensor,
    objective_tensor,
)
from models import FeatureSpec, InferenceMethod, LearningRateSchedule, NetworkConfig, TrainConfig, config_hash
from observations import BaseObservation, get_observation, inverse_softplus_np, softplus, softplus_np

logger = logging.getLogger(__name__)

COLLAPSE_STDDEV = 1e-7

Trace = tuple[tuple[int, float], ...]


class VariationalParams(BaseModel):
    """Mean-field Gaussian posterior: mean and raw scale (stddev = softplus(raw_scale))."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: np.ndarray
    raw_scale: np.ndarray
    layout: ParamLayout

    @field_validator("mean", "raw_scale", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_size(self) -> "VariationalParams":
        if len(self.mean) != self.layout.size or len(self.raw_scale) != self.layout.size:
            raise CompatibilityError(
                f"variational parameters have {len(self.mean)}/{len(self.raw_scale)} entries; "
                f"layout expects {self.layout.size}"
            )
        return self

    @property
    def stddev(self) -> np.ndarray:
        return softplus_np(self.raw_scale)

    @property
    def values(self) -> np.ndarray:
        """Mean followed by raw scale: twice the ParamVector length."""
        return np.concatenate([self.mean, self.raw_scale])

    def mean_params(self) -> ParamVector:
        return ParamVector(values=self.mean, layout=self.layout)


Member = Union[ParamVector, VariationalParams]


class PosteriorEnsemble(BaseModel):
    """Fitted ensemble members plus the configuration they belong to."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    method: InferenceMethod
    members: tuple[Member, ...]
    config_hash: str
    network: NetworkConfig
    features: FeatureSpec
    member_seeds: tuple[int, ...] = ()
    traces: tuple[Trace, ...] = ()

    @model_validator(mode="after")
    def _check_members(self) -> "PosteriorEnsemble":
        expected_type = VariationalParams if self.method == "VI" else ParamVector
        layout = build_layout(self.network)
        for k, member in enumerate(self.members):
            if not isinstance(member, expected_type):
                raise CompatibilityError(f"member {k} is {type(member).__name__}; {self.method} expects {expected_type.__name__}")
            if member.layout != layout:
                raise CompatibilityError(f"member {k} layout does not match the network configuration")
        if self.config_hash != config_hash(self.features, self.network):
            raise CompatibilityError("ensemble config_hash does not match its features/network")
        return self

    @classmethod
    def from_members(
        cls,
        method: str,
        members,
        network: NetworkConfig,
        features: FeatureSpec,
        member_seeds=(),
        traces=(),
    ) -> "PosteriorEnsemble":
        return cls(
            method=method,
            members=tuple(members),
            config_hash=config_hash(features, network),
            network=network,
            features=features,
            member_seeds=tuple(member_seeds),
            traces=tuple(traces),
        )

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def layout(self) -> ParamLayout:
        return build_layout(self.network)


class ElboEstimate(BaseModel):
    """Monte Carlo ELBO estimate with its standard error."""
    model_config = ConfigDict(frozen=True)

    estimate: float
    stderr: float
    n_samples: int


# ---------------------------------------------------------------------------
# Schedule and batching
# ---------------------------------------------------------------------------

def resolve_epochs(train: TrainConfig, n_records: int, batch_size: int) -> int:
    """Configured epochs, or enough epochs for about TARGET_TOTAL_STEPS gradient steps."""
    if train.epochs is not None:
        return train.epochs
    steps_per_epoch = math.ceil(n_records / batch_size)
    return max(1, math.ceil(TARGET_TOTAL_STEPS / steps_per_epoch))


def effective_batch_size(train: TrainConfig, n_records: int) -> int:
    if train.batch_size > n_records:
        logger.warning(f"batch_size={train.batch_size} exceeds {n_records} records; clamped to {n_records}")
        return n_records
    return train.batch_size


def member_seeds(train: TrainConfig) -> list[int]:
    """Independent per-member seeds spawned from TrainConfig.seed."""
    children = np.random.SeedSequence(train.seed).spawn(train.ensemble_size)
    return [int(child.generate_state(1)[0]) for child in children]


def learning_rate_factor(schedule: LearningRateSchedule, total_steps: int) -> Callable[[int], float]:
    """Multiplier on peak_rate at each step: linear warmup, then constant or cosine decay."""
    warmup = int(round(schedule.warmup_fraction * total_steps))

    def factor(step: int) -> float:
        if warmup > 0 and step < warmup:
            return (step + 1) / warmup
        if schedule.decay == "constant":
            return 1.0
        progress = min(1.0, (step - warmup) / max(1, total_steps - warmup))
        return 0.5 * (1.0 + math.cos(math.pi * progress))

    return factor


def _minibatches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield torch.from_numpy(order[start:start + batch_size])


def _optimizer(parameters: list[torch.Tensor], train: TrainConfig, total_steps: int):
    optimizer = torch.optim.Adam(parameters, lr=train.learning_rate.peak_rate)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, learning_rate_factor(train.learning_rate, total_steps))
    return optimizer, scheduler


class _TrainingProblem(BaseModel):
    """Tensors and configuration shared by all members of one fit."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    network: NetworkConfig
    features: FeatureSpec
    layout: ParamLayout
    head: BaseObservation
    X: torch.Tensor
    y: torch.Tensor
    train: TrainConfig
    batch_size: int
    epochs: int

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def total_steps(self) -> int:
        return self.epochs * math.ceil(self.n / self.batch_size)


def _prepare(network: NetworkConfig, dataset, spec: FeatureSpec, train: TrainConfig) -> _TrainingProblem:
    if len(dataset) == 0:
        raise InputError("cannot fit an empty dataset")
    spec = resolve_feature_spec(spec, dataset.location_coords if dataset.n_locations else dataset.space)
    X = build_feature_matrix(spec, dataset.space, dataset.time, dataset.covariates)
    if network.m is None:
        network = network.model_copy(update={"m": X.shape[1]})
    elif network.m != X.shape[1]:
        raise CompatibilityError(f"network.m={network.m} but the feature spec yields {X.shape[1]} covariates")
    head = get_observation(network.observation.kind)
    head.validate_targets(dataset.values)

    batch_size = effective_batch_size(train, len(dataset))
    return _TrainingProblem(
        network=network,
        features=spec,
        layout=build_layout(network),
        head=head,
        X=torch.as_tensor(X, dtype=torch.float64),
        y=torch.as_tensor(np.asarray(dataset.values), dtype=torch.float64),
        train=train,
        batch_size=batch_size,
        epochs=resolve_epochs(train, len(dataset), batch_size),
    )


def _run_members(fit_member: Callable[[int, int], tuple], seeds: list[int]) -> list[tuple]:
    """Train members, concurrently when BAYESNF_MAX_WORKERS > 1; results keep member order."""
    if MAX_WORKERS > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=MAX_WORKERS) as pool:
            return list(pool.map(fit_member, range(len(seeds)), seeds))
    return [fit_member(k, seed) for k, seed in enumerate(seeds)]


def _check_objective(value: torch.Tensor, step: int, member: int) -> None:
    if not bool(torch.isfinite(value)):
        raise NumericalError(f"non-finite objective at step {step} (member {member})")


# ---------------------------------------------------------------------------
# Point estimates: MAP and MLE
# ---------------------------------------------------------------------------

def _fit_point_member(problem: _TrainingProblem, member: int, seed: int, include_prior: bool):
    params = init_params(problem.network, seed)
    theta = torch.tensor(params.values, dtype=torch.float64, requires_grad=True)

    def full_objective() -> float:
        with torch.no_grad():
            value = objective_tensor(
                problem.network, problem.layout, problem.head, theta, problem.X, problem.y,
                include_prior=include_prior,
            )
        _check_objective(value, step, member)
        return float(value)

    step = 0
    trace = [(0, full_objective())]
    if problem.total_steps == 0:
        return params, tuple(trace)

    optimizer, scheduler = _optimizer([theta], problem.train, problem.total_steps)
    rng = np.random.default_rng([seed, 0])
    for _ in range(problem.epochs):
        for batch in _minibatches(rng, problem.n, problem.batch_size):
            optimizer.zero_grad()
            objective = objective_tensor(
                problem.network, problem.layout, problem.head, theta,
                problem.X[batch], problem.y[batch],
                scale=problem.n / len(batch), include_prior=include_prior,
            )
            _check_objective(objective, step, member)
            (-objective).backward()
            optimizer.step()
            scheduler.step()
            step += 1
            if step % problem.train.objective_every == 0 or step == problem.total_steps:
                trace.append((step, full_objective()))

    return ParamVector(values=theta.detach().numpy().copy(), layout=problem.layout), tuple(trace)


def _fit_point_ensemble(method: str, network, dataset, spec, train: TrainConfig, include_prior: bool) -> PosteriorEnsemble:
    problem = _prepare(network, dataset, spec, train)
    seeds = member_seeds(train)
    logger.info("=" * 60)
    logger.info(
        f"Fitting {method} ensemble: M={len(seeds)}, N={problem.n}, B={problem.batch_size}, "
        f"epochs={problem.epochs}, steps/member={problem.total_steps}, params={problem.layout.size}"
    )
    started = time.monotonic()
    results = _run_members(lambda k, s: _fit_point_member(problem, k, s, include_prior), seeds)
    for k, (_, trace) in enumerate(results):
        logger.info(f"  member {k}: objective {trace[0][1]:.3f} -> {trace[-1][1]:.3f}")
    logger.info(f"{method} fit finished in {time.monotonic() - started:.1f}s")
    logger.info("=" * 60)
    return PosteriorEnsemble.from_members(
        method=method,
        members=[params for params, _ in results],
        network=problem.network,
        features=problem.features,
        member_seeds=seeds,
        traces=[trace for _, trace in results],
    )


def fit_map(config: NetworkConfig, dataset, spec: FeatureSpec, train: TrainConfig) -> PosteriorEnsemble:
    """Ensemble of stochastic MAP estimates, one per member seed."""
    return _fit_point_ensemble("MAP", config, dataset, spec, train, include_prior=True)


def fit_mle(config: NetworkConfig, dataset, spec: FeatureSpec, train: TrainConfig) -> PosteriorEnsemble:
    """Same procedure as fit_map with the log prior removed from the objective."""
    return _fit_point_ensemble("MLE", config, dataset, spec, train, include_prior=False)


# ---------------------------------------------------------------------------
# Variational inference
# ---------------------------------------------------------------------------

def gaussian_kl(mean, stddev) -> np.ndarray:
    """Elementwise KL(Normal(mean, stddev) || Normal(0, 1))."""
    mean_t = torch.as_tensor(np.asarray(mean, dtype=np.float64))
    std_t = torch.as_tensor(np.asarray(stddev, dtype=np.float64))
    prior = Normal(torch.zeros_like(mean_t), torch.ones_like(mean_t))
    return kl_divergence(Normal(mean_t, std_t), prior).numpy().copy()


def _standard_index(layout: ParamLayout) -> torch.Tensor:
    ranges = [np.arange(b.start, b.stop) for b in layout.blocks if b.prior == "standard"]
    return torch.from_numpy(np.concatenate(ranges) if ranges else np.zeros(0, dtype=np.int64))


def _closed_form_kl(layout: ParamLayout, mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    idx = _standard_index(layout)
    q = Normal(mu[idx], sigma[idx], validate_args=False)
    p = Normal(torch.zeros_like(mu[idx]), torch.ones_like(mu[idx]), validate_args=False)
    return kl_divergence(q, p).sum()


def _scaled_block_kl(layout: ParamLayout, theta: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor) -> dict[str, torch.Tensor]:
    """Single-sample estimate of KL for omega/beta blocks, whose prior scale depends on a sampled xi."""
    out = {}
    for b in layout.blocks:
        if b.prior != "scaled":
            continue
        sl = slice(b.start, b.stop)
        xi = layout.block(f"xi{b.layer}")
        prior_scale = softplus(theta[xi.start])
        log_q = Normal(mu[sl], sigma[sl], validate_args=False).log_prob(theta[sl]).sum()
        log_p = Normal(torch.zeros_like(theta[sl]), prior_scale, validate_args=False).log_prob(theta[sl]).sum()
        out[b.name] = log_q - log_p
    return out


def _elbo_sample(
    network: NetworkConfig,
    layout: ParamLayout,
    head: BaseObservation,
    mu: torch.Tensor,
    sigma: torch.Tensor,
    eps: torch.Tensor,
    X: torch.Tensor,
    y: torch.Tensor,
    scale: float,
) -> torch.Tensor:
    """scale * log-likelihood at theta = mu + sigma * eps, minus the KL estimate."""
    theta = mu + sigma * eps
    log_lik = log_likelihood_tensor(network, layout, head, theta, X, y)
    kl = _closed_form_kl(layout, mu, sigma) + sum(_scaled_block_kl(layout, theta, mu, sigma).values())
    return scale * log_lik - kl


def _fit_vi_member(problem: _TrainingProblem, member: int, seed: int):
    init = init_params(problem.network, seed)
    mu = torch.tensor(init.values, dtype=torch.float64, requires_grad=True)
    rho_init = float(inverse_softplus_np(problem.train.vi_init_stddev))
    rho = torch.full_like(mu, rho_init).detach().requires_grad_(True)

    batch_rng = np.random.default_rng([seed, 0])
    noise_rng = np.random.default_rng([seed, 1])
    trace_rng = np.random.default_rng([seed, 2])
    n_samples = problem.train.vi_samples_per_step

    def draw(rng: np.random.Generator) -> torch.Tensor:
        return torch.from_numpy(rng.standard_normal(problem.layout.size))

    def full_elbo() -> float:
        with torch.no_grad():
            value = _elbo_sample(
                problem.network, problem.layout, problem.head, mu, softplus(rho),
                draw(trace_rng), problem.X, problem.y, scale=1.0,
            )
        _check_objective(value, step, member)
        return float(value)

    step = 0
    trace = [(0, full_elbo())]
    if problem.total_steps > 0:
        optimizer, scheduler = _optimizer([mu, rho], problem.train, problem.total_steps)
        for _ in range(problem.epochs):
            for batch in _minibatches(batch_rng, problem.n, problem.batch_size):
                optimizer.zero_grad()
                sigma = softplus(rho)
                # (N/B) * batch log-likelihood - KL, i.e. KL weighted by B/N per minibatch.
                elbo = sum(
                    _elbo_sample(
                        problem.network, problem.layout, problem.head, mu, sigma, draw(noise_rng),
                        problem.X[batch], problem.y[batch], scale=problem.n / len(batch),
                    )
                    for _ in range(n_samples)
                ) / n_samples
                _check_objective(elbo, step, member)
                (-elbo).backward()
                optimizer.step()
                scheduler.step()
                step += 1
                if step % problem.train.objective_every == 0 or step == problem.total_steps:
                    trace.append((step, full_elbo()))

    params = VariationalParams(
        mean=mu.detach().numpy().copy(),
        raw_scale=rho.detach().numpy().copy(),
        layout=problem.layout,
    )
    collapsed = int(np.sum(params.stddev < COLLAPSE_STDDEV))
    if collapsed:
        logger.warning(f"VI member {member}: {collapsed} posterior stddevs collapsed below {COLLAPSE_STDDEV}")
    return params, tuple(trace)


def fit_vi(config: NetworkConfig, dataset, spec: FeatureSpec, train: TrainConfig) -> PosteriorEnsemble:
    """Ensemble of mean-field Gaussian variational posteriors."""
    if train.method != "VI":
        raise InputError(f"fit_vi requires train.method='VI', got {train.method!r}")
    if train.kl_scale_mode != "uniform":
        raise InputError(f"kl_scale_mode={train.kl_scale_mode!r} is reserved; only 'uniform' is implemented")
    problem = _prepare(config, dataset, spec, train)
    seeds = member_seeds(train)
    logger.info("=" * 60)
    logger.info(
        f"Fitting VI ensemble: M={len(seeds)}, N={problem.n}, B={problem.batch_size}, "
        f"epochs={problem.epochs}, samples/step={train.vi_samples_per_step}, params={problem.layout.size}"
    )
    started = time.monotonic()
    results = _run_members(lambda k, s: _fit_vi_member(problem, k, s), seeds)
    for k, (_, trace) in enumerate(results):
        logger.info(f"  member {k}: ELBO {trace[0][1]:.3f} -> {trace[-1][1]:.3f}")
    logger.info(f"VI fit finished in {time.monotonic() - started:.1f}s")
    logger.info("=" * 60)
    return PosteriorEnsemble.from_members(
        method="VI",
        members=[params for params, _ in results],
        network=problem.network,
        features=problem.features,
        member_seeds=seeds,
        traces=[trace for _, trace in results],
    )


def fit(config: NetworkConfig, dataset, spec: FeatureSpec, train: TrainConfig) -> PosteriorEnsemble:
    """Route to fit_map, fit_vi or fit_mle by train.method."""
    if train.method == "MAP":
        return fit_map(config, dataset, spec, train)
    if train.method == "VI":
        return fit_vi(config, dataset, spec, train)
    if train.method == "MLE":
        return fit_mle(config, dataset, spec, train)
    raise InputError(f"Unknown inference method: {train.method}")


def _check_variational_layout(config: NetworkConfig, vparams: VariationalParams) -> ParamLayout:
    if vparams.layout != build_layout(config):
        raise CompatibilityError("variational parameters do not match the network layout")
    return vparams.layout


def kl_by_block(config: NetworkConfig, vparams: VariationalParams, seed: int = 0) -> dict[str, float]:
    """
    Per-block KL(q || prior).

    Standard-normal blocks are exact; omega/beta blocks use one sample
    theta = mean + stddev * eps with eps drawn from default_rng(seed).
    """
    layout = _check_variational_layout(config, vparams)
    mu = torch.as_tensor(vparams.mean)
    sigma = torch.as_tensor(vparams.stddev)
    eps = torch.from_numpy(np.random.default_rng(seed).standard_normal(layout.size))
    with torch.no_grad():
        theta = mu + sigma * eps
        scaled = _scaled_block_kl(layout, theta, mu, sigma)
        out = {}
        for b in layout.blocks:
            if b.prior == "scaled":
                out[b.name] = float(scaled[b.name])
            elif b.size == 0:
                out[b.name] = 0.0
            else:
                out[b.name] = float(gaussian_kl(vparams.mean[b.start:b.stop], vparams.stddev[b.start:b.stop]).sum())
    return out


def elbo_estimate(
    config: NetworkConfig,
    vparams: VariationalParams,
    dataset,
    features,
    n_samples: int = 32,
    seed: int = 0,
) -> ElboEstimate:
    """
    Monte Carlo ELBO on the full dataset with its standard error.

    Samples use eps drawn sequentially from default_rng(seed); the first
    sample shares its eps with kl_by_block(config, vparams, seed).
    """
    if n_samples < 1:
        raise InputError(f"n_samples must be >= 1, got {n_samples}")
    layout = _check_variational_layout(config, vparams)
    head = get_observation(config.observation.kind)
    y = np.asarray(dataset.values, dtype=np.float64)
    if len(y):
        head.validate_targets(y)
    X = np.asarray(features, dtype=np.float64)
    if X.size == 0:
        X = X.reshape(len(y), config.m)
    if X.shape != (len(y), config.m):
        raise InputError(f"feature matrix has shape {X.shape}; expected ({len(y)}, {config.m})")
    X = torch.as_tensor(X)
    rng = np.random.default_rng(seed)
    mu = torch.as_tensor(vparams.mean)
    sigma = torch.as_tensor(vparams.stddev)
    values = []
    with torch.no_grad():
        for _ in range(n_samples):
            eps = torch.from_numpy(rng.standard_normal(vparams.layout.size))
            values.append(float(_elbo_sample(config, layout, head, mu, sigma, eps, X, torch.as_tensor(y), 1.0)))
    values = np.asarray(values)
    stderr = float(values.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return ElboEstimate(estimate=float(values.mean()), stderr=stderr, n_samples=n_samples)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_ensemble(ens: PosteriorEnsemble, n_draws: int, seed: int) -> list[ParamVector]:
    """
    Parameter draws from a fitted ensemble.

    MAP/MLE ensembles return their members. VI ensembles pick a member
    uniformly and draw theta = mean + stddev * eps, n_draws times.
    """
    if not ens.members:
        raise InputError("cannot sample from an empty ensemble")
    if ens.method in ("MAP", "MLE"):
        return list(ens.members)
    if n_draws < 1:
        raise InputError(f"n_draws must be >= 1, got {n_draws}")
    rng = np.random.default_rng(seed)
    choices = rng.integers(len(ens.members), size=n_draws)
    eps = rng.standard_normal((n_draws, ens.layout.size))
    draws = []
    for i, k in enumerate(choices):
        member = ens.members[int(k)]
        draws.append(ParamVector(values=member.mean + member.stddev * eps[i], layout=member.layout))
    return draws


def summarize_traces(ens: PosteriorEnsemble) -> list[dict]:
    """First and last recorded objective per member."""
    return [
        {"member": k, "seed": seed, "initial": trace[0][1], "final": trace[-1][1], "points": len(trace)}
        for k, (seed, trace) in enumerate(zip(ens.member_seeds, ens.traces))
        if trace
    ]
