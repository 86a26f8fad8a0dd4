"""Padding matrix P and the masked combine M * x + P fed to the encoder."""
from typing import Optional

import numpy as np

from dynimp.core.data_model import MaskMatrix, Window
from dynimp.core.imputers import DEFAULT_K, knn_estimates
from dynimp.exceptions import ShapeMismatchError

# T x F, zero at observed positions.
PaddingMatrix = np.ndarray


def build_padding(window: Window, k: int = DEFAULT_K, fallback: Optional[np.ndarray] = None) -> PaddingMatrix:
    """kNN estimates at missing cells, 0 elsewhere."""
    return np.where(window.mask, 0.0, knn_estimates(window, k, fallback))


def combine_arrays(values: np.ndarray, mask: MaskMatrix, padding: PaddingMatrix) -> np.ndarray:
    """M * x + P on raw arrays of any matching shape."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != mask.shape or values.shape != padding.shape:
        raise ShapeMismatchError(
            f"values {values.shape}, mask {mask.shape} and padding {padding.shape} must agree")
    # missing cells contribute nothing, whatever they store (NaN included)
    return np.where(mask, values, 0.0) + padding


def masked_combine(window: Window, padding: PaddingMatrix) -> np.ndarray:
    return combine_arrays(window.values, window.mask, padding)
