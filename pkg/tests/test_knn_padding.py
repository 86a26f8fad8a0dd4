import numpy as np
import pytest

from dynimp.core.data_model import Window
from dynimp.core.imputers import impute_knn
from dynimp.core.knn_padding import build_padding, combine_arrays, masked_combine
from dynimp.exceptions import ShapeMismatchError


class TestPadding:
    def test_zero_at_observed_and_knn_at_missing(self, rng, random_window):
        for _ in range(200):
            w = random_window(rng, rng.integers(2, 7), rng.integers(1, 5), observed=0.6)
            fallback = rng.uniform(0.0, 1.0, w.shape[1])
            padding = build_padding(w, k=2, fallback=fallback)
            assert np.all(padding[w.mask] == 0.0)
            expected = impute_knn(w, 2, fallback).values
            assert np.array_equal(padding[~w.mask], expected[~w.mask])

    def test_fully_observed_window_has_zero_padding(self):
        w = Window(np.arange(6.0).reshape(3, 2), np.ones((3, 2), dtype=bool), 0)
        assert not build_padding(w).any()


class TestMaskedCombine:
    def test_combine_is_imputation(self, rng, random_window):
        w = random_window(rng, 5, 3, observed=0.5)
        combined = masked_combine(w, build_padding(w, k=3))
        assert np.array_equal(combined, impute_knn(w, 3).values)

    def test_stored_content_of_missing_cells_is_ignored(self):
        values = np.array([[1.0, np.nan], [np.inf, 2.0]])
        mask = np.array([[True, False], [False, True]])
        padding = np.array([[0.0, 0.5], [0.25, 0.0]])
        combined = combine_arrays(values, mask, padding)
        assert combined.tolist() == [[1.0, 0.5], [0.25, 2.0]]

    def test_shapes_must_agree(self):
        with pytest.raises(ShapeMismatchError):
            combine_arrays(np.zeros((2, 2)), np.ones((2, 2), dtype=bool), np.zeros((2, 3)))
