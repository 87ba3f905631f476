"""
Observation head registry: resolves an ObservationModel kind to its head.
"""

import logging

from errors import InputError
from observations.base import BaseObservation
from observations.normal import NormalObservation
from observations.poisson import PoissonObservation
from observations.student_t import StudentTObservation

logger = logging.getLogger(__name__)

_heads: dict[str, BaseObservation] = {}

_HEAD_TYPES = {
    "Normal": NormalObservation,
    "StudentT": StudentTObservation,
    "Poisson": PoissonObservation,
}


def get_observation(kind: str) -> BaseObservation:
    """
    Get the observation head for a family name.

    Args:
        kind: Normal, StudentT or Poisson

    Returns:
        Shared BaseObservation instance
    """
    if kind not in _heads:
        if kind not in _HEAD_TYPES:
            raise InputError(f"Unknown observation kind: {kind}")
        _heads[kind] = _HEAD_TYPES[kind]()
    return _heads[kind]
