"""
StudentT observation head: Y ~ StudentT(df, F, scale).

Raw parameters map to scale = softplus(raw_0) and df = 2 + DF_MARGIN + softplus(raw_1),
so df stays strictly above 2 even where softplus underflows.
"""

import numpy as np
import torch
from scipy import special, stats
from torch.distributions import StudentT

from observations.base import BaseObservation, softplus

MIN_DEGREES_OF_FREEDOM = 2.0
DF_MARGIN = 1e-8


class StudentTObservation(BaseObservation):
    param_names = ("scale", "df")

    @property
    def kind(self) -> str:
        return "StudentT"

    def constrain(self, raw: torch.Tensor) -> torch.Tensor:
        offset = torch.zeros_like(raw)
        offset[..., 1] = MIN_DEGREES_OF_FREEDOM + DF_MARGIN
        return softplus(raw) + offset

    def log_prob(self, F: torch.Tensor, y: torch.Tensor, derived: torch.Tensor) -> torch.Tensor:
        dist = StudentT(derived[..., 1], F, derived[..., 0], validate_args=False)
        return dist.log_prob(y)

    @staticmethod
    def _unpack(derived):
        derived = np.asarray(derived, dtype=np.float64)
        return derived[..., 0], derived[..., 1]

    def cdf(self, y, loc, derived):
        scale, df = self._unpack(derived)
        z = (np.asarray(y, dtype=np.float64) - loc) / scale
        # Regularized incomplete beta form; the tail is computed directly for accuracy.
        tail = 0.5 * special.betainc(df / 2.0, 0.5, df / (df + z * z))
        return np.where(z < 0, tail, 1.0 - tail)

    def pdf(self, y, loc, derived):
        scale, df = self._unpack(derived)
        return stats.t.pdf(y, df, loc=loc, scale=scale)

    def ppf(self, alpha, loc, derived):
        scale, df = self._unpack(derived)
        return stats.t.ppf(alpha, df, loc=loc, scale=scale)

    def mean(self, loc, derived):
        scale, _ = self._unpack(derived)
        return np.broadcast_to(np.asarray(loc, dtype=np.float64), np.shape(scale)).copy()

    def sample(self, loc, derived, rng):
        scale, df = self._unpack(derived)
        return loc + scale * rng.standard_t(df)
