"""
Sensor windows, masks, scaling, missingness injection and the synthetic
correlated-channel generator.

Missing cells are never encoded as sentinels inside the value matrix: every
window carries a parallel boolean mask (True = observed). Consumers must read
values only through the mask.
"""
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel

from dynimp.exceptions import EmptyDatasetError, IngestError, ScalingError, ShapeMismatchError, UnknownLabelError
from dynimp.utils.text_manager import get_label_names, label_separator

# T x F boolean matrix, True where the cell is observed.
MaskMatrix = np.ndarray

MISSING_TOKENS = ("", "nan", "NaN", "NAN")


@dataclass(frozen=True)
class SensorFrame:
    """One time bin of F features; NaN marks a missing feature."""
    timestamp: int
    features: np.ndarray
    label_id: Optional[int] = None

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.features)


@dataclass(frozen=True)
class Window:
    values: np.ndarray
    mask: MaskMatrix
    label_id: int
    user: int = 0
    start: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise ShapeMismatchError(f"window values {values.shape} and mask {mask.shape} disagree")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def with_mask(self, mask: MaskMatrix) -> "Window":
        return replace(self, mask=mask)

    def with_values(self, values: np.ndarray, mask: Optional[MaskMatrix] = None) -> "Window":
        return replace(self, values=values, mask=self.mask if mask is None else mask)


@dataclass(frozen=True)
class ScalingParams:
    """Per-feature statistics of observed training cells.

    minmax: `low`/`high` are min and max. zscore: `low` is the mean and
    `high` the population standard deviation. `constant` flags degenerate
    features (max == min, or std == 0).
    """
    mode: Literal["minmax", "zscore"]
    low: np.ndarray
    high: np.ndarray
    constant: np.ndarray

    def _params(self, features: Optional[np.ndarray]):
        if features is None:
            return self.low, self.high, self.constant
        return self.low[features], self.high[features], self.constant[features]

    def scale(self, values: np.ndarray, features: Optional[np.ndarray] = None) -> np.ndarray:
        """Scales a (..., F) array, or loose cells whose feature indices are given."""
        values = np.asarray(values, dtype=np.float64)
        low, high, constant = self._params(features)
        if self.mode == "minmax":
            span = np.where(constant, 1.0, high - low)
            return np.where(constant, 0.5, (values - low) / span)
        std = np.where(constant, 1.0, high)
        return np.where(constant, 0.0, (values - low) / std)

    def unscale(self, values: np.ndarray, features: Optional[np.ndarray] = None) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        low, high, constant = self._params(features)
        if self.mode == "minmax":
            restored = values * (high - low) + low
        else:
            restored = values * high + low
        return np.where(constant, low, restored)


@dataclass(frozen=True)
class Dataset:
    windows: Tuple[Window, ...]
    feature_names: Tuple[str, ...]
    label_names: Tuple[str, ...]
    scaling: Optional[ScalingParams] = None
    scaled: bool = False

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "label_names", tuple(self.label_names))
        n_features = len(self.feature_names)
        shapes = {w.shape for w in self.windows}
        if len(shapes) > 1:
            raise ShapeMismatchError(f"windows of differing shapes: {sorted(shapes)}")
        for w in self.windows:
            if w.shape[1] != n_features:
                raise ShapeMismatchError(f"window has {w.shape[1]} features, dataset declares {n_features}")
            if not 0 <= w.label_id < len(self.label_names):
                raise ShapeMismatchError(f"label id {w.label_id} outside [0, {len(self.label_names)})")

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    @property
    def window_length(self) -> int:
        return self.windows[0].shape[0] if self.windows else 0

    def values_array(self) -> np.ndarray:
        return np.stack([w.values for w in self.windows])

    def mask_array(self) -> np.ndarray:
        return np.stack([w.mask for w in self.windows])

    def labels(self) -> np.ndarray:
        return np.array([w.label_id for w in self.windows], dtype=np.int64)

    def with_windows(self, windows: Sequence[Window], **changes) -> "Dataset":
        return replace(self, windows=tuple(windows), **changes)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return self.with_windows([self.windows[i] for i in indices])


@dataclass(frozen=True)
class GroundTruthStore:
    """Original values of cells hidden by inject_missingness."""
    window_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    f: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.values)

    def scaled(self, params: ScalingParams, clip: bool = False) -> "GroundTruthStore":
        """Ground truth expressed in the scaled space of `params`."""
        out = params.scale(self.values, self.f)
        if clip and params.mode == "minmax":
            out = np.clip(out, 0.0, 1.0)
        return replace(self, values=out)

    def restrict(self, window_indices: Sequence[int]) -> "GroundTruthStore":
        """Keeps cells of the given windows, renumbered to their position in `window_indices`."""
        position = {int(w): i for i, w in enumerate(window_indices)}
        keep = np.array([int(w) in position for w in self.window_idx], dtype=bool)
        renumbered = np.array([position[int(w)] for w in self.window_idx[keep]], dtype=np.int64)
        return GroundTruthStore(renumbered, self.t[keep], self.f[keep], self.values[keep])


class IngestSchema(BaseModel):
    """Column mapping of a raw sensor CSV."""
    timestamp_column: str = "timestamp"
    label_column: str = "label"
    user_column: Optional[str] = None
    feature_columns: Optional[List[str]] = None
    bin_seconds: int = 60


def _modal_label(labels: Sequence[Optional[int]]) -> Optional[int]:
    known = [label for label in labels if label is not None]
    if not known:
        return None
    # argmax returns the first maximum, i.e. the smallest id among ties
    return int(np.argmax(np.bincount(known)))


def resolve_label(raw: str, label_names: Sequence[str], line: Optional[int] = None) -> int:
    index = {name: i for i, name in enumerate(label_names)}
    if raw in index:
        return index[raw]
    sep = label_separator()
    if sep in raw and raw.split(sep)[0] in index:
        return index[raw.split(sep)[0]]
    raise UnknownLabelError(raw, label_names, line)


def build_windows(frames: Sequence[SensorFrame], window_length: int, stride: int, user: int = 0) -> List[Window]:
    """Slices consecutive frames into windows starting at 0, stride, 2*stride, ..."""
    if window_length < 2:
        raise ValueError(f"window length must be at least 2, got {window_length}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    windows: List[Window] = []
    if len(frames) < window_length:
        return windows
    for start in range(0, len(frames) - window_length + 1, stride):
        chunk = frames[start:start + window_length]
        label = _modal_label([fr.label_id for fr in chunk])
        if label is None:
            logger.debug(f"Skipping unlabeled window at frame {start} of user {user}")
            continue
        features = np.stack([fr.features for fr in chunk])
        mask = ~np.isnan(features)
        windows.append(Window(np.where(mask, features, 0.0), mask, label, user=user, start=chunk[0].timestamp))
    return windows


def _line(index: int) -> int:
    # index 0 is the first data row, printed on line 2 under the header
    return int(index) + 2


def _first_bad(flags: pd.Series) -> Optional[int]:
    hits = flags.to_numpy().nonzero()[0]
    return int(flags.index[hits[0]]) if len(hits) else None


def _read_rows(path: Path, schema: IngestSchema, label_names: Sequence[str]) -> Tuple[pd.DataFrame, List[str]]:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"{path} is empty")
    except pd.errors.ParserError as e:
        raise IngestError(f"malformed CSV: {e}")
    raw.columns = [str(c).strip() for c in raw.columns]
    raw = raw.fillna("").apply(lambda column: column.str.strip())
    raw = raw.reset_index(drop=True)

    for required in (schema.timestamp_column, schema.label_column):
        if required not in raw.columns:
            raise IngestError(f"missing column '{required}'", line=1)
    reserved = {schema.timestamp_column, schema.label_column, schema.user_column}
    feature_columns = schema.feature_columns or [c for c in raw.columns if c not in reserved]
    for name in feature_columns:
        if name not in raw.columns:
            raise IngestError(f"missing feature column '{name}'", line=1)

    # every check reports its first offending row; the earliest row wins
    problems: List[Tuple[int, str]] = []

    ts_raw = raw[schema.timestamp_column]
    ts_float = pd.to_numeric(ts_raw, errors="coerce")
    bad = _first_bad(ts_float.isna() | np.isinf(ts_float))
    if bad is not None:
        raise IngestError(f"bad timestamp '{ts_raw[bad]}'", _line(bad))
    ts = ts_float.astype(np.int64)
    users = raw[schema.user_column] if schema.user_column else pd.Series("", index=raw.index)
    steps = ts.groupby(users, sort=False).diff()
    bad = _first_bad(steps <= 0)
    if bad is not None:
        previous = int(ts[bad] - steps[bad])
        problems.append((bad, f"timestamp {ts[bad]} does not increase (previous {previous})"))

    values: Dict[str, pd.Series] = {}
    for name in feature_columns:
        cells = raw[name]
        missing = cells.isin(MISSING_TOKENS)
        numeric = pd.to_numeric(cells.where(~missing), errors="coerce")
        bad = _first_bad(numeric.isna() & ~missing)
        if bad is not None:
            problems.append((bad, f"bad value '{cells[bad]}' in column '{name}'"))
        bad = _first_bad(np.isinf(numeric))
        if bad is not None:
            problems.append((bad, f"non-finite value '{cells[bad]}' in column '{name}'"))
        values[name] = numeric.astype(np.float64)
    if problems:
        index, message = min(problems)
        raise IngestError(message, _line(index))

    label_raw = raw[schema.label_column]
    resolved = {
        value: resolve_label(value, label_names, _line(index))
        for index, value in label_raw[label_raw != ""].drop_duplicates().items()
    }
    frame = pd.DataFrame({
        "user": users.to_numpy(),
        "bin": (ts // schema.bin_seconds).to_numpy(),
        "label": label_raw.map(resolved).to_numpy(),
        **{name: series.to_numpy() for name, series in values.items()},
    })
    return frame, feature_columns


def _frames_for_user(rows: pd.DataFrame, feature_columns: List[str], bin_seconds: int) -> List[SensorFrame]:
    means = rows.groupby("bin")[feature_columns].mean()
    labels = rows.groupby("bin")["label"].agg(
        lambda s: _modal_label([None if pd.isna(v) else int(v) for v in s]))
    bins = range(int(means.index.min()), int(means.index.max()) + 1)
    means = means.reindex(bins)
    labels = labels.reindex(bins)
    return [
        SensorFrame(
            timestamp=b * bin_seconds,
            features=means.loc[b].to_numpy(dtype=np.float64),
            label_id=None if pd.isna(labels.loc[b]) else int(labels.loc[b]),
        )
        for b in bins
    ]


def ingest_csv(
    path: Path,
    schema: Optional[IngestSchema] = None,
    window_length: int = 24,
    stride: Optional[int] = None,
    label_names: Optional[Sequence[str]] = None,
) -> Dataset:
    """Reads a raw sensor CSV, bins it per minute and cuts it into windows."""
    schema = schema or IngestSchema()
    label_names = list(label_names or get_label_names("movement4"))
    stride = stride or window_length
    path = Path(path)
    logger.info(f"Ingesting {path}")

    rows, feature_columns = _read_rows(path, schema, label_names)
    if rows.empty:
        raise EmptyDatasetError(f"{path} has no data rows")

    frames_by_user: List[List[SensorFrame]] = []
    for _, user_rows in rows.groupby("user", sort=True):
        frames_by_user.append(_frames_for_user(user_rows, feature_columns, schema.bin_seconds))
    total_frames = sum(len(frames) for frames in frames_by_user)
    if total_frames < window_length:
        raise EmptyDatasetError(f"{path} yields {total_frames} frames, fewer than the window length {window_length}")

    windows: List[Window] = []
    for user, frames in enumerate(frames_by_user):
        windows.extend(build_windows(frames, window_length, stride, user=user))
    if not windows:
        raise EmptyDatasetError(f"{path} yields no labeled window of length {window_length}")
    logger.info(f"Built {len(windows)} windows from {total_frames} frames ({len(frames_by_user)} users)")
    return Dataset(windows, feature_columns, label_names)


def _observed_columns(dataset: Dataset, indices: Optional[Sequence[int]]) -> List[np.ndarray]:
    source = dataset if indices is None else dataset.subset(indices)
    if not len(source):
        raise EmptyDatasetError("no windows to compute statistics from")
    values = source.values_array().reshape(-1, dataset.n_features)
    mask = source.mask_array().reshape(-1, dataset.n_features)
    return [values[mask[:, f], f] for f in range(dataset.n_features)]


def fit_scaling(dataset: Dataset, mode: str = "minmax", indices: Optional[Sequence[int]] = None) -> ScalingParams:
    """Fits per-feature scaling on observed cells (of `indices` windows only, when given)."""
    if mode not in ("minmax", "zscore"):
        raise ValueError(f"unknown scaling mode '{mode}'")
    low, high, constant = [], [], []
    for name, observed in zip(dataset.feature_names, _observed_columns(dataset, indices)):
        if observed.size == 0:
            raise ScalingError(name)
        if mode == "minmax":
            lo, hi = float(observed.min()), float(observed.max())
            low.append(lo)
            high.append(hi)
            constant.append(hi == lo)
        else:
            mean, std = float(observed.mean()), float(observed.std())
            low.append(mean)
            high.append(std)
            constant.append(std == 0.0)
    params = ScalingParams(mode, np.array(low), np.array(high), np.array(constant, dtype=bool))
    if params.constant.any():
        names = [n for n, c in zip(dataset.feature_names, params.constant) if c]
        logger.warning(f"Constant features under {mode} scaling: {', '.join(names)}")
    return params


def scale_dataset(dataset: Dataset, params: ScalingParams, clip: bool = False) -> Dataset:
    """Applies `params`; with clip, minmax values are clamped to [0, 1]."""
    windows = []
    for w in dataset.windows:
        scaled = params.scale(w.values)
        if clip and params.mode == "minmax":
            scaled = np.clip(scaled, 0.0, 1.0)
        windows.append(w.with_values(np.where(w.mask, scaled, 0.0)))
    return dataset.with_windows(windows, scaling=params, scaled=True)


def unscale_dataset(dataset: Dataset) -> Dataset:
    if not dataset.scaled or dataset.scaling is None:
        return dataset
    windows = [w.with_values(dataset.scaling.unscale(w.values)) for w in dataset.windows]
    return dataset.with_windows(windows, scaled=False)


def feature_means(dataset: Dataset, indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Mean of observed cells per feature; 0 for a feature with no observation."""
    means = []
    for name, observed in zip(dataset.feature_names, _observed_columns(dataset, indices)):
        if observed.size == 0:
            logger.warning(f"Feature '{name}' has no observed cells; its mean defaults to 0")
            means.append(0.0)
        else:
            means.append(float(observed.mean()))
    return np.array(means)


def inject_missingness(dataset: Dataset, level: float, seed: int) -> Tuple[Dataset, GroundTruthStore]:
    """Hides each observed cell independently with probability `level`.

    Only mask bits flip from observed to missing; stored values stay as they
    were and the hidden originals are returned for scoring.
    """
    if not 0.0 <= level < 1.0:
        raise ValueError(f"missingness level {level} outside [0, 1)")
    rng = np.random.default_rng(seed)
    windows, idx, ts, fs, originals = [], [], [], [], []
    for i, w in enumerate(dataset.windows):
        drop = rng.random(w.shape) < level
        hidden = w.mask & drop
        if hidden.any():
            t, f = np.nonzero(hidden)
            idx.append(np.full(len(t), i, dtype=np.int64))
            ts.append(t)
            fs.append(f)
            originals.append(w.values[t, f])
            windows.append(w.with_mask(w.mask & ~drop))
        else:
            windows.append(w)
    if not idx:
        return dataset.with_windows(windows), GroundTruthStore()
    store = GroundTruthStore(np.concatenate(idx), np.concatenate(ts).astype(np.int64),
                             np.concatenate(fs).astype(np.int64), np.concatenate(originals))
    logger.debug(f"Injected missingness level={level} seed={seed}: {len(store)} cells hidden")
    return dataset.with_windows(windows), store


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    out = np.empty(n)
    out[0] = rng.normal(0.0, sigma / math.sqrt(1.0 - phi * phi))
    shocks = rng.normal(0.0, sigma, n)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + shocks[t]
    return out


def _regimes(rng: np.random.Generator, n: int, n_regimes: int, stay: float) -> np.ndarray:
    states = np.empty(n, dtype=np.int64)
    states[0] = rng.integers(n_regimes)
    switches = rng.random(n) >= stay
    targets = rng.integers(n_regimes - 1, size=n)
    for t in range(1, n):
        if switches[t]:
            # jump to one of the other regimes
            states[t] = targets[t] + (targets[t] >= states[t - 1])
        else:
            states[t] = states[t - 1]
    return states


def generate_synthetic(
    users: int,
    minutes: int,
    n_features: int,
    coupling: float,
    seed: int,
    window_length: int = 24,
    stride: Optional[int] = None,
    inherent_missing: float = 0.0,
    label_names: Optional[Sequence[str]] = None,
) -> Dataset:
    """Correlated-channel stand-in for a multi-user wearable dataset.

    The shared latent driver is a slow, label-free AR(1) drift plus a fast
    AR(1) whose amplitude is set by a per-user Markov regime. Each channel is
    an affine image of `coupling * latent + (1 - coupling) * own` where `own`
    is an independent AR(1). Labels are the regimes, so they show only in
    cell-level fluctuation, not in the window level.
    """
    if n_features < 2:
        raise ValueError(f"need at least two features, got {n_features}")
    if not 0.0 <= coupling <= 1.0:
        raise ValueError(f"coupling {coupling} outside [0, 1]")
    label_names = list(label_names or get_label_names("movement4"))
    n_regimes = len(label_names)
    stride = stride or window_length
    amplitudes = np.linspace(0.3, 1.2, n_regimes)

    children = np.random.SeedSequence(seed).spawn(users + 1)
    layout_rng = np.random.default_rng(children[0])
    offsets = layout_rng.uniform(-1.0, 1.0, n_features)
    gains = layout_rng.uniform(0.5, 2.0, n_features)

    windows: List[Window] = []
    for user, user_seed in enumerate(children[1:]):
        rng = np.random.default_rng(user_seed)
        regimes = _regimes(rng, minutes, n_regimes, stay=0.97)
        drift = _ar1(rng, minutes, phi=0.98, sigma=math.sqrt(1.0 - 0.98 ** 2))
        latent = drift + amplitudes[regimes] * _ar1(rng, minutes, phi=0.3, sigma=math.sqrt(1.0 - 0.3 ** 2))
        own = np.stack([_ar1(rng, minutes, phi=0.5, sigma=math.sqrt(0.75)) for _ in range(n_features)], axis=1)
        signal = coupling * latent[:, None] + (1.0 - coupling) * own
        values = offsets + gains * signal
        if inherent_missing > 0.0:
            values[rng.random(values.shape) < inherent_missing] = np.nan
        frames = [SensorFrame(m * 60, values[m], int(regimes[m])) for m in range(minutes)]
        windows.extend(build_windows(frames, window_length, stride, user=user))
    if not windows:
        raise EmptyDatasetError(f"{minutes} minutes per user is shorter than the window length {window_length}")
    feature_names = [f"channel_{i}" for i in range(n_features)]
    logger.info(f"Generated {len(windows)} synthetic windows ({users} users, coupling={coupling})")
    return Dataset(windows, feature_names, label_names)


def cross_channel_correlation(dataset: Dataset) -> float:
    """Mean off-diagonal Pearson correlation over fully observed rows."""
    rows = dataset.values_array().reshape(-1, dataset.n_features)
    observed = dataset.mask_array().reshape(-1, dataset.n_features).all(axis=1)
    rows = rows[observed]
    if len(rows) < 2:
        return float("nan")
    corr = np.corrcoef(rows, rowvar=False)
    off_diagonal = corr[~np.eye(dataset.n_features, dtype=bool)]
    return float(np.nanmean(off_diagonal))
