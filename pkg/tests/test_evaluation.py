import numpy as np
import pytest

from dynimp.config import RunConfig
from dynimp.core.data_model import GroundTruthStore
from dynimp.core.evaluation import (
    ExperimentResult,
    aggregate,
    balanced_accuracy,
    imputation_rmse,
    parse_method,
    pooled_features,
    run_cell,
    split_indices,
    train_classifier,
)
from dynimp.core.imputers import ImputedWindow
from dynimp.exceptions import ClassAbsentError, EmptyDatasetError
from dynimp.utils.text_manager import get_label_names


def imputed(values):
    values = np.asarray(values, dtype=np.float64)
    return ImputedWindow(values, np.ones(values.shape, dtype=bool))


def result(method, level, seed, ba=None, rmse=None, error=None):
    return ExperimentResult(method=method, level=level, seed=seed, ba=ba, rmse=rmse, error=error)


class TestBalancedAccuracy:
    def test_perfect(self):
        assert balanced_accuracy([0, 1, 2, 3, 1], [0, 1, 2, 3, 1], 4) == 1.0

    def test_constant_predictor(self):
        truth = [0, 1, 2, 3, 0, 1, 2, 3, 3]
        assert balanced_accuracy([2] * len(truth), truth, 4) == pytest.approx(0.25)

    def test_hand_computed_two_classes(self):
        # class 0 recall 2/2, class 1 recall 1/2
        assert balanced_accuracy([0, 0, 1, 0], [0, 0, 1, 1], 2) == pytest.approx(0.75)

    def test_invariant_under_relabeling(self, rng):
        truth = rng.integers(0, 4, 60)
        predictions = rng.integers(0, 4, 60)
        permutation = np.array([2, 0, 3, 1])
        assert balanced_accuracy(predictions, truth, 4) == pytest.approx(
            balanced_accuracy(permutation[predictions], permutation[truth], 4))

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            balanced_accuracy([], [], 4)


class TestImputationRmse:
    def test_single_cell(self):
        ground = GroundTruthStore(np.array([0]), np.array([1]), np.array([0]), np.array([0.5]))
        out = imputed([[0.0], [0.7]])
        assert imputation_rmse([out], ground) == pytest.approx(0.2)

    def test_exact_imputation(self):
        ground = GroundTruthStore(np.array([0, 0]), np.array([0, 1]), np.array([1, 0]), np.array([0.3, 0.6]))
        assert imputation_rmse([imputed([[9.0, 0.3], [0.6, 9.0]])], ground) == 0.0

    def test_empty_store(self):
        with pytest.raises(EmptyDatasetError):
            imputation_rmse([imputed([[0.0]])], GroundTruthStore())


class TestClassifier:
    @staticmethod
    def separable(rng, n=40):
        labels = np.arange(n) % 2
        windows = [imputed(0.2 + 0.6 * label + rng.normal(0.0, 0.02, (6, 3))) for label in labels]
        return windows, labels

    def test_separable_classes(self, rng):
        windows, labels = self.separable(rng)
        model = train_classifier(windows, labels, 2)
        assert (model.predict(windows) == labels).all()
        proba = model.predict_proba(windows)
        assert np.allclose(proba.sum(axis=1), 1.0)

    def test_deterministic(self, rng):
        windows, labels = self.separable(rng)
        a = train_classifier(windows, labels, 2)
        b = train_classifier(windows, labels, 2)
        assert np.array_equal(a.estimator.coef_, b.estimator.coef_)

    def test_absent_class_is_named(self, rng):
        windows, labels = self.separable(rng)
        with pytest.raises(ClassAbsentError, match="FIX_walking"):
            train_classifier(windows, labels, 4, required_classes=[0, 1, 2],
                             label_names=get_label_names("movement4"))

    def test_shuffled_labels_score_near_chance(self, rng):
        windows = [imputed(rng.normal(size=(4, 2))) for _ in range(4000)]
        labels = rng.integers(0, 4, 4000)
        model = train_classifier(windows[:2000], labels[:2000], 4)
        ba = balanced_accuracy(model.predict(windows[2000:]), labels[2000:], 4)
        assert 0.15 <= ba <= 0.35

    def test_pooled_feature_width(self):
        windows = [ImputedWindow(np.zeros((5, 3)), np.ones((5, 3), dtype=bool))]
        assert pooled_features(windows).shape == (1, 6)
        assert pooled_features(windows, indicator=True).shape == (1, 12)


class TestAggregate:
    def test_mean_and_half_width(self):
        results = [result("mean", 0.1, s, ba=v) for s, v in enumerate([0.7, 0.8, 0.9])]
        (row,) = aggregate(results, ["mean"], [0.1])
        assert row.mean_ba == pytest.approx(0.8)
        assert row.ci_half_width == pytest.approx(1.96 * 0.1 / np.sqrt(3))
        assert row.seeds == 3

    def test_agreeing_seeds_have_zero_width(self):
        results = [result("knn", 0.2, s, ba=0.75) for s in range(4)]
        (row,) = aggregate(results, ["knn"], [0.2])
        assert row.ci_half_width == 0.0
        assert min(r.ba for r in results) <= row.mean_ba <= max(r.ba for r in results)

    def test_errors_are_counted_not_averaged(self):
        results = [result("mean", 0.1, 0, ba=0.6), result("mean", 0.1, 1, error="boom")]
        (row,) = aggregate(results, ["mean"], [0.1])
        assert row.mean_ba == 0.6
        assert row.seeds == 1
        assert row.errors == 1

    def test_row_order_and_cardinality(self):
        methods = ["mean", "knn", "interp", "locf", "indicator", "dynimp-knn"]
        levels = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
        results = [result(m, lv, s, ba=0.5) for lv in levels for s in range(10) for m in methods]
        assert len(results) == 360
        rows = aggregate(results, methods, levels)
        assert len(rows) == 36
        assert [(r.method, r.level) for r in rows[:2]] == [("mean", 0.1), ("mean", 0.2)]


class TestExperimentCells:
    def test_split_is_a_sorted_partition(self):
        labels = np.repeat(np.arange(4), 10)
        train_idx, val_idx = split_indices(labels, 0.8, seed=3)
        assert len(train_idx) == 32 and len(val_idx) == 8
        assert sorted(np.concatenate([train_idx, val_idx]).tolist()) == list(range(40))
        assert np.array_equal(train_idx, np.sort(train_idx))
        assert np.bincount(labels[val_idx]).tolist() == [2, 2, 2, 2]

    @pytest.mark.parametrize("method, parsed", [
        ("mean", ("baseline", "mean", False)),
        ("indicator", ("baseline", "mean", True)),
        ("dynimp-knn", ("dynimp", "knn", False)),
        ("dynimp-knn-indicator", ("dynimp", "knn", True)),
    ])
    def test_parse_method(self, method, parsed):
        assert parse_method(method) == parsed

    def test_cell_scores_in_range(self, labelled_dataset):
        config = RunConfig(seeds=[0], levels=[0.3])
        cell = run_cell(labelled_dataset(n_windows=60), "knn", 0.3, 0, config)
        assert cell.error is None
        assert 0.0 <= cell.ba <= 1.0
        assert cell.rmse >= 0.0

    def test_level_zero_is_identical_across_missing_only_methods(self, labelled_dataset):
        dataset = labelled_dataset(n_windows=60)
        config = RunConfig(epochs=1, hidden_size=4)
        scores = {m: run_cell(dataset, m, 0.0, 1, config) for m in ("zero", "mean", "interp", "locf", "knn")}
        assert all(r.error is None for r in scores.values())
        assert all(r.rmse is None for r in scores.values())
        assert len({r.ba for r in scores.values()}) == 1

    def test_dynimp_cell(self, labelled_dataset):
        config = RunConfig(epochs=1, hidden_size=4, batch_size=16)
        cell = run_cell(labelled_dataset(n_windows=40), "dynimp-knn-indicator", 0.2, 0, config)
        assert cell.error is None
        assert cell.rmse is not None

    def test_failure_is_recorded(self, labelled_dataset):
        cell = run_cell(labelled_dataset(n_windows=20), "median", 0.2, 0, RunConfig())
        assert cell.ba is None
        assert cell.error.startswith("ValueError")
