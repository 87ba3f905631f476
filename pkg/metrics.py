"""
Point and interval forecast scores.

RMSE and MAE score the point forecast (the predictive median by default);
MIS scores a central (1 - alpha) interval, penalising width plus 2/alpha
times each miss.
"""

import logging
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import InputError

logger = logging.getLogger(__name__)

RECORD_HEADER = "rmse,mae,mis,n,alpha"


class ScoreReport(BaseModel):
    """Scores over one test set."""
    model_config = ConfigDict(frozen=True)

    rmse: float = Field(ge=0)
    mae: float = Field(ge=0)
    mis: float = Field(ge=0)
    n: int = Field(ge=1)
    alpha: float = Field(gt=0, lt=1)

    def to_record(self) -> str:
        """Single delimited line matching RECORD_HEADER."""
        return f"{self.rmse!r},{self.mae!r},{self.mis!r},{self.n},{self.alpha!r}"

    def to_text(self) -> str:
        level = round(100 * (1 - self.alpha), 6)
        return (
            f"n={self.n}  RMSE={self.rmse:.4f}  MAE={self.mae:.4f}  "
            f"MIS({level:g}%)={self.mis:.4f}"
        )


def _paired(y: Sequence[float], *others: Sequence[float]) -> list[np.ndarray]:
    arrays = [np.asarray(y, dtype=np.float64).reshape(-1)]
    arrays.extend(np.asarray(o, dtype=np.float64).reshape(-1) for o in others)
    n = len(arrays[0])
    if n == 0:
        raise InputError("cannot score an empty test set")
    if any(len(a) != n for a in arrays):
        raise InputError(f"length mismatch: {[len(a) for a in arrays]}")
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise InputError("scores need finite observations and forecasts")
    return arrays


def rmse(y: Sequence[float], yhat: Sequence[float]) -> float:
    y, yhat = _paired(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(y: Sequence[float], yhat: Sequence[float]) -> float:
    y, yhat = _paired(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def mis(y: Sequence[float], lower: Sequence[float], upper: Sequence[float], alpha: float = 0.05) -> float:
    """
    Mean interval score of central (1 - alpha) intervals [lower, upper].

    Raises:
        InputError: for alpha outside (0, 1), mismatched lengths or crossed intervals
    """
    if not 0 < alpha < 1:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    y, lower, upper = _paired(y, lower, upper)
    if np.any(lower > upper):
        raise InputError("interval lower bound exceeds upper bound")
    below = (2.0 / alpha) * np.maximum(lower - y, 0.0)
    above = (2.0 / alpha) * np.maximum(y - upper, 0.0)
    return float(np.mean((upper - lower) + below + above))


def coverage(y: Sequence[float], lower: Sequence[float], upper: Sequence[float]) -> float:
    """Fraction of observations inside [lower, upper]."""
    y, lower, upper = _paired(y, lower, upper)
    return float(np.mean((y >= lower) & (y <= upper)))


def score_predictions(
    y: Sequence[float],
    point: Sequence[float],
    lower: Sequence[float],
    upper: Sequence[float],
    alpha: float = 0.05,
) -> ScoreReport:
    """All scores for one test set."""
    report = ScoreReport(
        rmse=rmse(y, point),
        mae=mae(y, point),
        mis=mis(y, lower, upper, alpha),
        n=len(np.asarray(y).reshape(-1)),
        alpha=alpha,
    )
    logger.info(f"Scores: {report.to_text()}")
    return report


def aggregate_reports(reports: Sequence[ScoreReport]) -> ScoreReport:
    """Arithmetic mean of per-split scores; n is the total number of test points."""
    if not reports:
        raise InputError("no reports to aggregate")
    alphas = {r.alpha for r in reports}
    if len(alphas) != 1:
        raise InputError(f"reports use different alpha levels: {sorted(alphas)}")
    return ScoreReport(
        rmse=float(np.mean([r.rmse for r in reports])),
        mae=float(np.mean([r.mae for r in reports])),
        mis=float(np.mean([r.mis for r in reports])),
        n=sum(r.n for r in reports),
        alpha=reports[0].alpha,
    )
