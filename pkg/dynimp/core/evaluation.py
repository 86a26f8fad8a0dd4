"""Downstream classifier, balanced accuracy, imputation RMSE and per-cell experiment runs."""
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import balanced_accuracy_score
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from dynimp.config import RunConfig
from dynimp.core.data_model import Dataset, GroundTruthStore, feature_means, fit_scaling, inject_missingness, scale_dataset
from dynimp.core.dynimp_model import DynImpConfig, DynImpModel, impute_windows, train
from dynimp.core.imputers import ImputedWindow, augment_indicator, get_imputer
from dynimp.exceptions import ClassAbsentError, EmptyDatasetError, ShapeMismatchError

CI_Z = 1.96


class ClassifierConfig(BaseModel):
    c: float = 1.0
    max_iter: int = 500
    seed: int = 0


@dataclass(frozen=True)
class ClassifierModel:
    """Softmax regression over mean/std pooled window features."""
    scaler: StandardScaler
    estimator: LogisticRegression
    n_labels: int
    indicator: bool

    def predict_proba(self, windows: Sequence[ImputedWindow]) -> np.ndarray:
        features = self.scaler.transform(pooled_features(windows, self.indicator))
        proba = np.zeros((len(windows), self.n_labels))
        proba[:, self.estimator.classes_] = self.estimator.predict_proba(features)
        return proba

    def predict(self, windows: Sequence[ImputedWindow]) -> np.ndarray:
        features = self.scaler.transform(pooled_features(windows, self.indicator))
        return self.estimator.predict(features).astype(np.int64)


def pooled_features(windows: Sequence[ImputedWindow], indicator: bool = False) -> np.ndarray:
    """Per-column mean and standard deviation over time; 2F columns, 4F with indicators."""
    matrices = np.stack([augment_indicator(w) if indicator else w.values for w in windows])
    return np.concatenate([matrices.mean(axis=1), matrices.std(axis=1)], axis=1)


def train_classifier(
    windows: Sequence[ImputedWindow],
    labels: Sequence[int],
    n_labels: int,
    hyper: Optional[ClassifierConfig] = None,
    indicator: bool = False,
    required_classes: Optional[Sequence[int]] = None,
    label_names: Optional[Sequence[str]] = None,
) -> ClassifierModel:
    hyper = hyper or ClassifierConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if len(windows) != len(labels):
        raise ShapeMismatchError(f"{len(windows)} windows but {len(labels)} labels")
    required = range(n_labels) if required_classes is None else required_classes
    present = set(labels.tolist())
    for cls in required:
        if cls not in present:
            raise ClassAbsentError(label_names[cls] if label_names else str(cls))
    if len(present) < 2:
        raise ClassAbsentError(f"only class {next(iter(present), '?')} present; need at least two")

    features = pooled_features(windows, indicator)
    scaler = StandardScaler().fit(features)
    estimator = LogisticRegression(C=hyper.c, max_iter=hyper.max_iter, random_state=hyper.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        estimator.fit(scaler.transform(features), labels)
    return ClassifierModel(scaler, estimator, n_labels, indicator)


def balanced_accuracy(predictions: Sequence[int], truth: Sequence[int], n_labels: int) -> float:
    """Mean recall over the classes present in `truth`."""
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if truth.size == 0:
        raise EmptyDatasetError("balanced accuracy of an empty prediction set")
    if predictions.shape != truth.shape:
        raise ShapeMismatchError(f"{predictions.size} predictions for {truth.size} labels")
    if truth.min() < 0 or truth.max() >= n_labels:
        raise ValueError(f"true labels must lie in [0, {n_labels})")
    with warnings.catch_warnings():
        # classes predicted but absent from truth warn in sklearn
        warnings.simplefilter("ignore")
        return float(balanced_accuracy_score(truth, predictions))


def imputation_rmse(imputed: Sequence[ImputedWindow], ground: GroundTruthStore) -> float:
    """RMSE over the injected-missing cells only."""
    if len(ground) == 0:
        raise EmptyDatasetError("ground-truth store is empty")
    values = np.stack([w.values for w in imputed])
    estimates = values[ground.window_idx, ground.t, ground.f]
    return float(np.sqrt(np.mean((estimates - ground.values) ** 2)))


class ExperimentResult(BaseModel):
    method: str
    level: float
    seed: int
    ba: Optional[float] = None
    rmse: Optional[float] = None
    error: Optional[str] = None


class AggregateResult(BaseModel):
    method: str
    level: float
    mean_ba: Optional[float]
    ci_half_width: Optional[float]
    seeds: int
    mean_rmse: Optional[float] = None
    errors: int = 0


def split_indices(labels: np.ndarray, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Shuffled split, stratified by label when every class has two windows or more."""
    indices = np.arange(len(labels))
    counts = np.bincount(labels)
    stratify = labels if counts[counts > 0].min() >= 2 else None
    try:
        train_idx, val_idx = train_test_split(indices, train_size=train_fraction, random_state=seed,
                                              shuffle=True, stratify=stratify)
    except ValueError:
        # too few windows per class for the requested fraction
        train_idx, val_idx = train_test_split(indices, train_size=train_fraction, random_state=seed, shuffle=True)
    return np.sort(train_idx), np.sort(val_idx)


def parse_method(method: str) -> Tuple[str, Optional[str], bool]:
    """'dynimp-knn-indicator' -> ('dynimp', 'knn', True); 'mean' -> ('baseline', 'mean', False)."""
    if method == "indicator":
        return "baseline", "mean", True
    if method.startswith("dynimp-"):
        parts = method.split("-")
        return "dynimp", parts[1], parts[-1] == "indicator"
    return "baseline", method, False


def impute_for_method(
    method: str, dataset: Dataset, train_idx: np.ndarray, config: RunConfig, seed: int
) -> List[ImputedWindow]:
    """Imputes every window of a scaled dataset with the given method, fitting on the training windows."""
    family, strategy, _ = parse_method(method)
    means = feature_means(dataset, train_idx)
    if family == "baseline":
        imputer = get_imputer(strategy, k=config.k, means=means)
        return [imputer(w) for w in dataset.windows]
    model_config = DynImpConfig.from_run_config(config, padding_strategy=strategy)
    model = DynImpModel.initialize(dataset.n_features, model_config, seed=seed)
    model, _ = train(model, dataset.subset(train_idx), model_config, seed=seed)
    return impute_windows(model, dataset.windows)


def run_cell(dataset: Dataset, method: str, level: float, seed: int, config: RunConfig) -> ExperimentResult:
    """One (method, level, seed) cell: inject, split, scale, impute, classify, score."""
    try:
        injected, truth = inject_missingness(dataset, level, seed)
        labels = injected.labels()
        train_idx, val_idx = split_indices(labels, config.train_fraction, seed)
        scaling = fit_scaling(injected, config.scaling_mode, train_idx)
        scaled = scale_dataset(injected, scaling, clip=True)
        imputed = impute_for_method(method, scaled, train_idx, config, seed)

        _, _, indicator = parse_method(method)
        classifier = train_classifier(
            [imputed[i] for i in train_idx], labels[train_idx], dataset.n_labels,
            ClassifierConfig(c=config.classifier_c, max_iter=config.classifier_max_iter, seed=seed),
            indicator=indicator,
            required_classes=sorted(set(labels.tolist())),
            label_names=dataset.label_names,
        )
        predictions = classifier.predict([imputed[i] for i in val_idx])
        ba = balanced_accuracy(predictions, labels[val_idx], dataset.n_labels)
        rmse = imputation_rmse(imputed, truth.scaled(scaling, clip=True)) if len(truth) else None
        logger.debug(f"Cell method={method} level={level} seed={seed}: ba={ba:.4f} rmse={rmse}")
        return ExperimentResult(method=method, level=level, seed=seed, ba=ba, rmse=rmse)
    except Exception as e:
        logger.error(f"Cell method={method} level={level} seed={seed} failed: {e}")
        return ExperimentResult(method=method, level=level, seed=seed, error=f"{type(e).__name__}: {e}")


def aggregate(results: Sequence[ExperimentResult], methods: Sequence[str], levels: Sequence[float]) -> List[AggregateResult]:
    """Mean BA and normal-approximation 95% half-width per (method, level), in the given order."""
    grouped: Dict[Tuple[str, float], List[ExperimentResult]] = {}
    for result in results:
        grouped.setdefault((result.method, result.level), []).append(result)
    rows = []
    for method in methods:
        for level in levels:
            cell = grouped.get((method, level), [])
            scores = np.array([r.ba for r in cell if r.error is None and r.ba is not None])
            rmses = [r.rmse for r in cell if r.error is None and r.rmse is not None]
            if scores.size:
                mean = float(scores.mean())
                spread = float(scores.std(ddof=1)) if scores.size > 1 else 0.0
                half_width = CI_Z * spread / math.sqrt(scores.size)
            else:
                mean, half_width = None, None
            rows.append(AggregateResult(
                method=method, level=level, mean_ba=mean, ci_half_width=half_width, seeds=int(scores.size),
                mean_rmse=float(np.mean(rmses)) if rmses else None,
                errors=sum(1 for r in cell if r.error is not None),
            ))
    return rows
