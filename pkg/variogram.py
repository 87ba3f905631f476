"""
Spatiotemporal variograms.

The empirical surface bins every pair of observations by spatial distance
and time lag and reports half the mean squared difference per cell. The
inferred surface applies the same estimator to fields simulated from a
fitted ensemble on a grid of locations and times, averaged over draws.
"""

import logging
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.spatial import ConvexHull, Delaunay, QhullError
from scipy.spatial.distance import cdist

from errors import InputError
from features import build_feature_matrix
from inference import PosteriorEnsemble, sample_ensemble
from model import OBSERVATION_BLOCK, forward_batch
from models import FeatureSpec, NetworkConfig, VariogramSpec
from observations import get_observation

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
SURFACE_COLUMNS = ["distance_bin_center", "lag", "gamma", "pairs"]


class VariogramSurface(BaseModel):
    """
    Semivariance per (distance bin, time lag) cell.

    gamma is NaN in cells with fewer than min_pairs pairs; pairs holds the
    raw pair count of every cell.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    distance_edges: tuple[float, ...]
    lags: tuple[int, ...]
    gamma: np.ndarray
    pairs: np.ndarray
    min_pairs: int

    @field_validator("gamma", "pairs", mode="before")
    @classmethod
    def _readonly(cls, v) -> np.ndarray:
        arr = np.array(v)
        arr.setflags(write=False)
        return arr

    @property
    def populated(self) -> np.ndarray:
        return ~np.isnan(self.gamma)

    @property
    def bin_centers(self) -> np.ndarray:
        edges = np.asarray(self.distance_edges)
        return 0.5 * (edges[:-1] + edges[1:])

    def cell(self, distance_bin: int, lag: int) -> Optional[float]:
        """Semivariance of a cell, or None when it is empty."""
        value = self.gamma[distance_bin, self.lags.index(lag)]
        return None if np.isnan(value) else float(value)

    def to_frame(self) -> pd.DataFrame:
        centers = self.bin_centers
        rows = [
            {
                "distance_bin_center": float(centers[b]),
                "lag": int(lag),
                "gamma": float(self.gamma[b, k]),
                "pairs": int(self.pairs[b, k]),
            }
            for b in range(len(centers))
            for k, lag in enumerate(self.lags)
        ]
        return pd.DataFrame(rows, columns=SURFACE_COLUMNS)


def haversine_distances(coords_a: np.ndarray, coords_b: np.ndarray) -> np.ndarray:
    """Great-circle distances in km between (lon, lat) degree pairs."""
    lon_a, lat_a = np.radians(coords_a[:, 0])[:, None], np.radians(coords_a[:, 1])[:, None]
    lon_b, lat_b = np.radians(coords_b[:, 0])[None, :], np.radians(coords_b[:, 1])[None, :]
    dlat = lat_b - lat_a
    dlon = lon_b - lon_a
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat_a) * np.cos(lat_b) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def pairwise_distances(coords: np.ndarray, metric: str) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if metric == "haversine":
        if coords.shape[1] != 2:
            raise InputError(f"haversine distance needs (lon, lat) coordinates, got d={coords.shape[1]}")
        return haversine_distances(coords, coords)
    return cdist(coords, coords, metric="euclidean")


def _distance_bins(coords: np.ndarray, spec: VariogramSpec) -> np.ndarray:
    """Bin index of every location pair; -1 outside [edges[0], edges[-1])."""
    distances = pairwise_distances(coords, spec.distance_metric)
    edges = np.asarray(spec.distance_bins)
    bins = np.digitize(distances, edges) - 1
    bins[(bins < 0) | (bins >= len(edges) - 1)] = -1
    return bins


def _value_grid(location_index: np.ndarray, time: np.ndarray, values: np.ndarray, n_locations: int) -> np.ndarray:
    """[locations, time steps] matrix of values, NaN where unobserved."""
    steps = np.rint(time)
    if not np.allclose(steps, time):
        raise InputError("variograms need integer time steps")
    steps = steps.astype(np.int64)
    start = steps.min() if len(steps) else 0
    width = int(steps.max() - start + 1) if len(steps) else 0
    grid = np.full((n_locations, width), np.nan)
    grid[location_index, steps - start] = values
    return grid


def _accumulate(grid: np.ndarray, bins: np.ndarray, lags: tuple[int, ...], n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Sum of squared differences and pair counts per (bin, lag).

    Pairs are unordered pairs of distinct observations: for lag 0 only
    distinct locations a < b; for lag > 0 every (a at t, b at t + lag),
    including a == b.
    """
    n_locations, width = grid.shape
    sums = np.zeros((n_bins, len(lags)))
    counts = np.zeros((n_bins, len(lags)), dtype=np.int64)
    for k, lag in enumerate(lags):
        if lag >= width:
            continue
        head = grid[:, : width - lag]
        tail = grid[:, lag:]
        for a in range(n_locations):
            squared = (head[a][np.newaxis, :] - tail) ** 2
            valid = ~np.isnan(squared)
            per_location_sum = np.where(valid, squared, 0.0).sum(axis=1)
            per_location_count = valid.sum(axis=1)
            keep = bins[a] >= 0
            if lag == 0:
                keep &= np.arange(n_locations) > a
            np.add.at(sums[:, k], bins[a][keep], per_location_sum[keep])
            np.add.at(counts[:, k], bins[a][keep], per_location_count[keep])
    return sums, counts


def _finish(sums_or_gamma: np.ndarray, counts: np.ndarray, spec: VariogramSpec, already_gamma: bool = False) -> VariogramSurface:
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = sums_or_gamma if already_gamma else 0.5 * sums_or_gamma / counts
    gamma = np.where(counts >= spec.min_pairs_per_bin, gamma, np.nan)
    return VariogramSurface(
        distance_edges=spec.distance_bins,
        lags=spec.time_lags,
        gamma=gamma,
        pairs=counts,
        min_pairs=spec.min_pairs_per_bin,
    )


def _require_populated(surface: VariogramSurface) -> None:
    if not surface.populated.any():
        raise InputError(
            f"no (distance, lag) cell has min_pairs_per_bin={surface.min_pairs} pairs; "
            f"largest count is {int(surface.pairs.max())}"
        )


def empirical_variogram(dataset, spec: VariogramSpec) -> VariogramSurface:
    """
    Empirical semivariance surface of a dataset.

    Raises:
        InputError: with fewer than 2 locations, or when no cell reaches
            min_pairs_per_bin
    """
    if dataset.n_locations < 2:
        raise InputError(f"empirical variogram needs at least 2 locations, got {dataset.n_locations}")
    grid = _value_grid(dataset.location_index, dataset.time, dataset.values, dataset.n_locations)
    bins = _distance_bins(dataset.location_coords, spec)
    sums, counts = _accumulate(grid, bins, spec.time_lags, len(spec.distance_bins) - 1)
    if counts.sum() == 0:
        raise InputError("no observation pairs fall in any (distance, lag) cell")
    surface = _finish(sums, counts, spec)
    _require_populated(surface)
    logger.info(
        f"Empirical variogram: {int(counts.sum())} pairs, "
        f"{int(surface.populated.sum())}/{surface.gamma.size} cells populated"
    )
    return surface


def inferred_variogram(
    ens: PosteriorEnsemble,
    config: NetworkConfig,
    spec_features: FeatureSpec,
    locations: np.ndarray,
    times: np.ndarray,
    spec: VariogramSpec,
    seed: int = 0,
    n_draws: int = 8,
) -> VariogramSurface:
    """
    Variogram of observations simulated from the fitted model.

    For each parameter draw, F is evaluated on the locations x times grid,
    observation noise is sampled, and the empirical estimator is applied;
    the per-draw surfaces are averaged.
    """
    if spec_features.exogenous:
        raise InputError("inferred variograms cannot use exogenous covariates")
    locations = np.asarray(locations, dtype=np.float64).reshape(-1, spec_features.d)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if len(locations) == 0 or len(times) == 0:
        raise InputError("inferred variogram needs at least one location and one time")

    n_loc, n_times = len(locations), len(times)
    space = np.repeat(locations, n_times, axis=0)
    time = np.tile(times, n_loc)
    location_index = np.repeat(np.arange(n_loc), n_times)
    X = build_feature_matrix(spec_features, space, time)
    bins = _distance_bins(locations, spec)
    n_bins = len(spec.distance_bins) - 1

    head = get_observation(config.observation.kind)
    draw_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(noise_seq)
    gammas = []
    counts = None
    for draw in sample_ensemble(ens, n_draws, int(draw_seq.generate_state(1)[0])):
        F = forward_batch(config, draw, X)
        derived = np.broadcast_to(head.constrain_np(draw.block(OBSERVATION_BLOCK)), (len(F), head.n_y))
        y = np.asarray(head.sample(F, derived, rng), dtype=np.float64)
        grid = _value_grid(location_index, time, y, n_loc)
        sums, counts = _accumulate(grid, bins, spec.time_lags, n_bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            gammas.append(0.5 * sums / counts)

    if counts.sum() == 0:
        raise InputError("no simulated pairs fall in any (distance, lag) cell")
    surface = _finish(np.mean(gammas, axis=0), counts, spec, already_gamma=True)
    _require_populated(surface)
    logger.info(f"Inferred variogram from {len(gammas)} draws on {n_loc} locations x {n_times} times")
    return surface


def uniform_locations_in_hull(dataset, n: int, seed: int = 0) -> np.ndarray:
    """
    n locations uniform over the convex hull of the dataset's locations.

    Raises:
        InputError: for d < 2 or fewer than d + 1 affinely independent locations
    """
    coords = np.unique(np.asarray(dataset.location_coords, dtype=np.float64), axis=0)
    d = coords.shape[1] if coords.ndim == 2 else 1
    if n == 0:
        return np.zeros((0, d))
    if d < 2:
        raise InputError("hull sampling needs at least 2 spatial dimensions")
    try:
        hull = ConvexHull(coords)
        triangulation = Delaunay(coords[hull.vertices])
    except (QhullError, ValueError) as e:
        raise InputError(f"degenerate convex hull of {len(coords)} locations: {e}") from e

    rng = np.random.default_rng(seed)
    low, high = coords.min(axis=0), coords.max(axis=0)
    accepted: list[np.ndarray] = []
    total = 0
    while total < n:
        candidates = rng.uniform(low, high, size=(max(2 * (n - total), 64), d))
        inside = candidates[triangulation.find_simplex(candidates) >= 0]
        accepted.append(inside)
        total += len(inside)
    return np.concatenate(accepted)[:n]
