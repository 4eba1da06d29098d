"""Prior mean functions for the GP models.

All of them are evaluated on normalized inputs and return normalized
target values.  The grid-backed prior wraps a low-resolution DEM with
bilinear interpolation and converts units through the dataset's
normalization statistics.
"""

from __future__ import annotations

import numpy as np

from .datasets import NormStats
from .grids import DemGrid, bilinear_sample


class ZeroMean:
    learnable = False

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.zeros(np.atleast_2d(X).shape[0])


class ConstantMean:
    """A single constant; learned jointly with the kernel when the
    enclosing trainer supports it."""

    def __init__(self, constant: float = 0.0, learnable: bool = True):
        self.constant = float(constant)
        self.learnable = bool(learnable)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.constant)


class GridInterpMean:
    """Bilinear interpolant of a low-resolution prior DEM.

    Queries arrive in normalized coordinates; they are mapped back to
    meters, sampled from the grid (constant extrapolation beyond the
    outer cell centers), and the elevations are normalized.
    """

    learnable = False

    def __init__(self, grid: DemGrid, stats: NormStats):
        self.grid = grid
        self.stats = stats

    def __call__(self, X: np.ndarray) -> np.ndarray:
        pts_m = self.stats.denormalize_points(np.atleast_2d(X))
        return self.stats.normalize_y(bilinear_sample(self.grid, pts_m))


def bilinear_prior(prior: DemGrid, stats: NormStats) -> GridInterpMean:
    """Mean function backed by the factor-5 low-resolution sample."""
    return GridInterpMean(prior, stats)
