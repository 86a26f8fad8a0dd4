"""Baseline imputers and the indicator-variable augmentation."""
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from loguru import logger

from dynimp.core.data_model import MaskMatrix, Window
from dynimp.exceptions import EmptyWindowError, ShapeMismatchError

DEFAULT_K = 5


@dataclass(frozen=True)
class ImputedWindow:
    values: np.ndarray
    source_mask: MaskMatrix

    def __post_init__(self):
        if self.values.shape != self.source_mask.shape:
            raise ShapeMismatchError(f"imputed values {self.values.shape} and mask {self.source_mask.shape} disagree")


def _finish(window: Window, estimates: np.ndarray) -> ImputedWindow:
    # observed cells always pass through untouched
    return ImputedWindow(np.where(window.mask, window.values, estimates), window.mask)


def impute_zero(window: Window) -> ImputedWindow:
    return _finish(window, np.zeros(window.shape))


def impute_filled_mean(window: Window, means: np.ndarray) -> ImputedWindow:
    """Fills missing cells with dataset-level feature means."""
    means = np.asarray(means, dtype=np.float64)
    if means.shape != (window.shape[1],):
        raise ShapeMismatchError(f"{means.shape[0]} feature means for a window of {window.shape[1]} features")
    return _finish(window, np.broadcast_to(means, window.shape))


def impute_interpolation(window: Window) -> ImputedWindow:
    """Linear interpolation in time; edge runs take the nearest observation."""
    n_steps, n_features = window.shape
    steps = np.arange(n_steps)
    estimates = np.zeros(window.shape)
    for f in range(n_features):
        observed = window.mask[:, f]
        if observed.any():
            estimates[:, f] = np.interp(steps, steps[observed], window.values[observed, f])
    return _finish(window, estimates)


def impute_locf(window: Window) -> ImputedWindow:
    """Last observation carried forward; a leading run takes the first observation."""
    n_steps, n_features = window.shape
    estimates = np.zeros(window.shape)
    for f in range(n_features):
        observed = np.flatnonzero(window.mask[:, f])
        if observed.size == 0:
            continue
        # index of the latest observation at or before each step
        latest = np.maximum.accumulate(np.where(window.mask[:, f], np.arange(n_steps), -1))
        source = np.where(latest >= 0, latest, observed[0])
        estimates[:, f] = window.values[source, f]
    return _finish(window, estimates)


def row_distances(values: np.ndarray, mask: MaskMatrix) -> np.ndarray:
    """Partial Euclidean distance between time rows over co-observed features.

    d(r, s) = sqrt(sum_f (x_rf - x_sf)^2 * F / n_rs) with n_rs the number of
    features observed in both rows; rows sharing no feature are at infinity.
    Squares are accumulated feature by feature, in index order.
    """
    n_steps, n_features = values.shape
    x = np.where(mask, values, 0.0)
    squares = np.zeros((n_steps, n_steps))
    counts = np.zeros((n_steps, n_steps), dtype=np.int64)
    for f in range(n_features):
        both = mask[:, None, f] & mask[None, :, f]
        diff = np.where(both, x[:, None, f] - x[None, :, f], 0.0)
        squares += diff * diff
        counts += both
    distances = np.full((n_steps, n_steps), np.inf)
    shared = counts > 0
    distances[shared] = np.sqrt(squares[shared] * (n_features / counts[shared]))
    return distances


def knn_estimates(window: Window, k: int = DEFAULT_K, fallback: Optional[np.ndarray] = None) -> np.ndarray:
    """kNN estimate for every missing cell of the window; observed cells hold 0.

    Candidates for cell (t, f) are the other rows observing f, ranked by
    row_distances with ties going to the smaller row index. The estimate is
    the mean of the first k candidates (all of them when fewer exist),
    summed in rank order. With no candidate the feature's fallback value is
    used (0 when none is given).
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if not window.mask.any():
        raise EmptyWindowError("window has no observed cell to take neighbors from")
    values, mask = window.values, window.mask
    n_steps, n_features = window.shape
    distances = row_distances(values, mask)
    estimates = np.zeros(window.shape)
    for f in range(n_features):
        receivers = np.flatnonzero(~mask[:, f])
        if receivers.size == 0:
            continue
        donors = np.flatnonzero(mask[:, f])
        if donors.size == 0:
            fill = 0.0 if fallback is None else float(fallback[f])
            logger.debug(f"Feature {f} unobserved in window; falling back to {fill}")
            estimates[receivers, f] = fill
            continue
        ranked = np.argsort(distances[np.ix_(receivers, donors)], axis=1, kind="stable")[:, :k]
        chosen = values[donors[ranked], f]
        total = np.zeros(receivers.size)
        for j in range(chosen.shape[1]):
            total += chosen[:, j]
        estimates[receivers, f] = total / chosen.shape[1]
    return estimates


def impute_knn(window: Window, k: int = DEFAULT_K, fallback: Optional[np.ndarray] = None) -> ImputedWindow:
    return _finish(window, knn_estimates(window, k, fallback))


def augment_indicator(imputed: ImputedWindow) -> np.ndarray:
    """T x 2F matrix: imputed values, then 1 where the cell was missing."""
    return np.hstack([imputed.values, (~imputed.source_mask).astype(np.float64)])


ImputerFn = Callable[[Window], ImputedWindow]


def get_imputer(name: str, k: int = DEFAULT_K, means: Optional[np.ndarray] = None) -> ImputerFn:
    """Resolves an imputer name (zero | mean | interp | locf | knn) to a callable."""
    registry: Dict[str, ImputerFn] = {
        "zero": impute_zero,
        "interp": impute_interpolation,
        "locf": impute_locf,
        "knn": lambda w: impute_knn(w, k, means),
    }
    if name == "mean":
        if means is None:
            raise ValueError("mean imputation needs feature means")
        return lambda w: impute_filled_mean(w, means)
    if name not in registry:
        raise ValueError(f"unknown imputer '{name}'")
    return registry[name]
