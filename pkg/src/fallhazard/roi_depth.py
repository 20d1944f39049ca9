"""Single-distance estimators for the depth pixels inside a detection box.

Each estimator turns the valid depth readings of a ROI into one distance:

* ``histogram``: equal-width bins over the sample range, mean of the
  fullest bin.
* ``kmeans``: 1-D Lloyd iterations from quantile seeds, mean of the
  largest cluster.
* ``double_threshold``: drop the background beyond ``mean + x_b``, then
  the foreground nearer than ``mean - x_f`` of what is left, and average
  the rest. Unlike the other two it does not need the object to dominate
  the ROI.

Ties between equally populated bins or clusters go to the nearer one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NoDepthError


@dataclass(frozen=True)
class EstimatorParams:
    k_bins: int = 10
    k_clusters: int = 3
    x_b: float = 0.3
    x_f: float = 0.3
    max_kmeans_iters: int = 100

    def __post_init__(self) -> None:
        if self.k_bins < 2 or self.k_clusters < 2:
            raise ValueError("k_bins and k_clusters must be at least 2")
        if not (self.x_b > 0 and self.x_f > 0):
            raise ValueError("x_b and x_f must be positive")


def _sample(values) -> np.ndarray:
    s = np.asarray(values, dtype=np.float64).ravel()
    if s.size == 0:
        raise NoDepthError("no valid depth readings in the region")
    if not (np.all(np.isfinite(s)) and np.all(s > 0)):
        raise ValueError("depth samples must be finite and positive")
    return s


def _mean(values: np.ndarray) -> float:
    # fsum keeps hand-checkable cases exact, e.g. (1.9 + 2.0 + 2.1) / 3 == 2.0
    return math.fsum(values.tolist()) / len(values)


def roi_sample(depth_values: np.ndarray, valid: np.ndarray, bounds) -> np.ndarray:
    """Valid depth readings inside half-open pixel bounds ``(x0, y0, x1, y1)``."""
    h, w = valid.shape
    x0, y0, x1, y1 = bounds
    c0, r0 = max(0, math.floor(x0)), max(0, math.floor(y0))
    c1, r1 = min(w, math.ceil(x1)), min(h, math.ceil(y1))
    window = valid[r0:r1, c0:c1]
    return depth_values[r0:r1, c0:c1][window]


def estimate_histogram(values, params: EstimatorParams = EstimatorParams()) -> float:
    s = _sample(values)
    lo, hi = float(s.min()), float(s.max())
    if hi == lo:
        return lo
    k = params.k_bins
    bins = np.floor((s - lo) * k / (hi - lo)).astype(np.int64)
    np.minimum(bins, k - 1, out=bins)
    counts = np.bincount(bins, minlength=k)
    winner = int(np.argmax(counts))  # first maximum is the nearest bin
    return _mean(s[bins == winner])


def _kmeans_1d(s: np.ndarray, k: int, max_iters: int) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations on sorted 1-D data; returns (labels, centroids)."""
    n = len(s)
    seeds = [s[min(n - 1, int((2 * j + 1) * n // (2 * k)))] for j in range(k)]
    centroids = np.array(seeds, dtype=np.float64)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        # argmin picks the lower index on equal distance; centroids stay sorted
        new = np.argmin(np.abs(s[:, None] - centroids[None, :]), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = s[labels == j]
            if members.size:
                centroids[j] = members.mean()
    return labels, centroids


def estimate_kmeans(values, params: EstimatorParams = EstimatorParams()) -> float:
    s = np.sort(_sample(values))
    k = params.k_clusters
    if s.size < k:
        return _mean(s)
    labels, centroids = _kmeans_1d(s, k, params.max_kmeans_iters)
    sizes = np.bincount(labels, minlength=k)
    best = max(
        (j for j in range(k) if sizes[j] > 0), key=lambda j: (sizes[j], -centroids[j])
    )
    return _mean(s[labels == best])


def estimate_double_threshold(values, params: EstimatorParams = EstimatorParams()) -> float:
    s = _sample(values)
    d_b = _mean(s)
    s = s[s <= d_b + params.x_b]
    d_f = _mean(s)
    s = s[s >= d_f - params.x_f]
    if s.size == 0:
        raise NoDepthError("double thresholding rejected every reading")
    return _mean(s)


ESTIMATORS: dict[str, Callable[[np.ndarray, EstimatorParams], float]] = {
    "histogram": estimate_histogram,
    "kmeans": estimate_kmeans,
    "double_threshold": estimate_double_threshold,
}


def estimate(name: str, values, params: EstimatorParams = EstimatorParams()) -> float:
    try:
        fn = ESTIMATORS[name]
    except KeyError:
        raise ValueError(f"unknown ROI depth estimator {name!r}; choose from {sorted(ESTIMATORS)}") from None
    return fn(values, params)
