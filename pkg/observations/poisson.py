"""
Poisson observation head: Y ~ Poisson(exp(F)). No global parameters.
"""

import numpy as np
import torch
from scipy import stats

from errors import InputError
from observations.base import BaseObservation


class PoissonObservation(BaseObservation):
    param_names = ()
    is_discrete = True

    @property
    def kind(self) -> str:
        return "Poisson"

    def constrain(self, raw: torch.Tensor) -> torch.Tensor:
        return raw

    def log_prob(self, F: torch.Tensor, y: torch.Tensor, derived: torch.Tensor) -> torch.Tensor:
        # F is the log rate.
        return y * F - torch.exp(F) - torch.lgamma(y + 1.0)

    def cdf(self, y, loc, derived):
        return stats.poisson.cdf(np.floor(y), np.exp(loc))

    def pdf(self, y, loc, derived):
        return stats.poisson.pmf(y, np.exp(loc))

    def ppf(self, alpha, loc, derived):
        return stats.poisson.ppf(alpha, np.exp(loc))

    def mean(self, loc, derived):
        return np.exp(np.asarray(loc, dtype=np.float64))

    def sample(self, loc, derived, rng):
        return rng.poisson(np.exp(loc))

    def validate_targets(self, y: np.ndarray) -> None:
        super().validate_targets(y)
        y = np.asarray(y, dtype=np.float64)
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise InputError("Poisson observations must be nonnegative integers")
