"""
Normal observation head: Y ~ Normal(F, variance), variance = softplus(raw).
"""

import numpy as np
import torch
from scipy import stats
from torch.distributions import Normal

from observations.base import BaseObservation, softplus


class NormalObservation(BaseObservation):
    param_names = ("variance",)

    @property
    def kind(self) -> str:
        return "Normal"

    def constrain(self, raw: torch.Tensor) -> torch.Tensor:
        return softplus(raw)

    def log_prob(self, F: torch.Tensor, y: torch.Tensor, derived: torch.Tensor) -> torch.Tensor:
        scale = torch.sqrt(derived[..., 0])
        return Normal(F, scale, validate_args=False).log_prob(y)

    @staticmethod
    def _scale(derived: np.ndarray) -> np.ndarray:
        return np.sqrt(np.asarray(derived)[..., 0])

    def cdf(self, y, loc, derived):
        return stats.norm.cdf(y, loc=loc, scale=self._scale(derived))

    def pdf(self, y, loc, derived):
        return stats.norm.pdf(y, loc=loc, scale=self._scale(derived))

    def ppf(self, alpha, loc, derived):
        return stats.norm.ppf(alpha, loc=loc, scale=self._scale(derived))

    def mean(self, loc, derived):
        return np.broadcast_to(np.asarray(loc, dtype=np.float64), np.shape(self._scale(derived))).copy()

    def sample(self, loc, derived, rng):
        return rng.normal(loc, self._scale(derived))
