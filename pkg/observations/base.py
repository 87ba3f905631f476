"""
Base observation head interface.

An observation head turns the field value F(s, t) and the raw global
observation parameters into a distribution over Y. Training uses the torch
log density (so gradients are exact); prediction uses the numpy/scipy
distribution functions, vectorised over mixture components.
"""

from abc import ABC, abstractmethod

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, model_validator

from errors import InputError
from models import ObservationKind


def softplus(x: torch.Tensor) -> torch.Tensor:
    """ln(1 + e^x), without the linear cutoff of torch.nn.functional.softplus."""
    return torch.logaddexp(x, torch.zeros_like(x))


def softplus_np(x) -> np.ndarray:
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def inverse_softplus_np(y) -> np.ndarray:
    """Raw value r with softplus(r) = y, for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


class ObservationParams(BaseModel):
    """Positive-constrained observation parameters, derived from raw values."""
    model_config = ConfigDict(frozen=True)

    kind: ObservationKind
    names: tuple[str, ...] = ()
    values: tuple[float, ...] = ()

    @model_validator(mode="after")
    def _check_values(self) -> "ObservationParams":
        if len(self.names) != len(self.values):
            raise ValueError(f"{len(self.values)} values for parameters {self.names}")
        if any(not (v > 0 and np.isfinite(v)) for v in self.values):
            raise ValueError(f"observation parameters must be positive and finite, got {self.values}")
        return self

    @classmethod
    def for_kind(cls, kind: str, **values: float) -> "ObservationParams":
        """Build params by name, e.g. ObservationParams.for_kind("Normal", variance=1.0)."""
        from observations.registry import get_observation

        head = get_observation(kind)
        missing = set(head.param_names) - set(values)
        if missing:
            raise InputError(f"{kind} requires parameters {head.param_names}, missing {sorted(missing)}")
        return cls(
            kind=kind,
            names=head.param_names,
            values=tuple(float(values[name]) for name in head.param_names),
        )

    def get(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class BaseObservation(ABC):
    """
    Abstract base class for observation heads.

    Derived parameters are arrays whose last axis has length n_y, in
    param_names order. Distribution methods broadcast y/alpha against
    loc [...] and derived [..., n_y].
    """

    param_names: tuple[str, ...] = ()
    is_discrete: bool = False

    @property
    @abstractmethod
    def kind(self) -> str:
        """Return the observation family name."""
        pass

    @property
    def n_y(self) -> int:
        return len(self.param_names)

    @abstractmethod
    def constrain(self, raw: torch.Tensor) -> torch.Tensor:
        """Map raw [..., n_y] to positive derived parameters."""
        pass

    @abstractmethod
    def log_prob(self, F: torch.Tensor, y: torch.Tensor, derived: torch.Tensor) -> torch.Tensor:
        """Elementwise log p(y | F, derived) in torch."""
        pass

    @abstractmethod
    def cdf(self, y: np.ndarray, loc: np.ndarray, derived: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def pdf(self, y: np.ndarray, loc: np.ndarray, derived: np.ndarray) -> np.ndarray:
        """Density, or mass for discrete heads."""
        pass

    @abstractmethod
    def ppf(self, alpha: np.ndarray, loc: np.ndarray, derived: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def mean(self, loc: np.ndarray, derived: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def sample(self, loc: np.ndarray, derived: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        pass

    def constrain_np(self, raw) -> np.ndarray:
        with torch.no_grad():
            raw_t = torch.as_tensor(np.asarray(raw, dtype=np.float64))
            return self.constrain(raw_t).numpy().copy()

    def params_from_raw(self, raw) -> ObservationParams:
        derived = self.constrain_np(raw)
        return ObservationParams(
            kind=self.kind,
            names=self.param_names,
            values=tuple(float(v) for v in derived.reshape(-1)),
        )

    def validate_targets(self, y: np.ndarray) -> None:
        """
        Check that observations lie in the support of the head.

        Raises:
            InputError: if any target is non-finite or outside the support
        """
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise InputError(f"{self.kind} observations must be finite")
