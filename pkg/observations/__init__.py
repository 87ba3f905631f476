"""
Observation heads for Bayesian Neural Fields.

Each head implements the same interface over a different likelihood:
- NormalObservation: Gaussian noise with learned variance
- StudentTObservation: heavy-tailed noise with learned scale and df > 2
- PoissonObservation: counts with log rate F
"""

from .base import (
    BaseObservation,
    ObservationParams,
    inverse_softplus_np,
    softplus,
    softplus_np,
)
from .normal import NormalObservation
from .poisson import PoissonObservation
from .registry import get_observation
from .student_t import StudentTObservation

__all__ = [
    "BaseObservation",
    "ObservationParams",
    "NormalObservation",
    "StudentTObservation",
    "PoissonObservation",
    "get_observation",
    "softplus",
    "softplus_np",
    "inverse_softplus_np",
]
