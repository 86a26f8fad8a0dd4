"""
LSTM denoising autoencoder with padded inputs.

Pipeline per window: Bernoulli dropout corruption -> padding of every cell
that is missing or dropped (zero / mean / interp / knn) -> M * x + P ->
LSTM encoder over the T steps -> per-step dense decoder. The loss only
covers originally observed cells.
"""
from dataclasses import dataclass, replace
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from dynimp.core.data_model import Dataset, MaskMatrix, ScalingParams, Window, feature_means
from dynimp.core.imputers import DEFAULT_K, ImputedWindow, get_imputer
from dynimp.core.knn_padding import PaddingMatrix, build_padding, combine_arrays
from dynimp.core.neural_core import (
    AdamConfig,
    AdamState,
    DenseCache,
    DenseParams,
    GateCache,
    LstmParams,
    ParamDict,
    adam_step,
    clip_global_norm,
    dense_backward,
    dense_forward,
    lstm_backward,
    lstm_sequence_forward,
)
from dynimp.exceptions import EmptyWindowError, ScaleDomainError, ShapeMismatchError, TrainingDivergedError

BCE_CLAMP = 1e-7
SCALE_TOLERANCE = 1e-9
ENCODER = "encoder."
DECODER = "decoder."


@dataclass(frozen=True)
class CorruptionSpec:
    """Each cell is kept with probability p (Bernoulli draw r), x~ = r * x."""
    p: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"keep probability {self.p} outside (0, 1]")


class DynImpConfig(BaseModel):
    padding_strategy: Literal["zero", "mean", "interp", "knn"] = "knn"
    k: int = Field(DEFAULT_K, ge=1)
    hidden_size: int = Field(32, ge=1)
    corruption_p: float = Field(0.8, gt=0.0, le=1.0)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(32, ge=1)
    adam: AdamConfig = Field(default_factory=AdamConfig)
    clip_norm: float = Field(5.0, gt=0.0)
    loss: Literal["bce", "mse"] = "bce"

    @classmethod
    def from_run_config(cls, config, padding_strategy: Optional[str] = None) -> "DynImpConfig":
        return cls(
            padding_strategy=padding_strategy or config.padding_strategy,
            k=config.k,
            hidden_size=config.hidden_size,
            corruption_p=config.corruption_p,
            epochs=config.epochs,
            batch_size=config.batch_size,
            adam=AdamConfig(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps),
            clip_norm=config.clip_norm,
            loss=config.loss,
        )

    @property
    def output_activation(self) -> str:
        return "sigmoid" if self.loss == "bce" else "identity"


@dataclass(frozen=True)
class DynImpModel:
    encoder: LstmParams
    decoder: DenseParams
    config: DynImpConfig
    feature_means: np.ndarray
    training_log: Tuple[float, ...] = ()
    seed: int = 0
    scaling: Optional[ScalingParams] = None

    def __post_init__(self):
        if self.decoder.W.shape != (self.encoder.input_size, self.encoder.hidden_size):
            raise ShapeMismatchError(
                f"decoder {self.decoder.W.shape} does not map hidden size {self.encoder.hidden_size} "
                f"back to {self.encoder.input_size} features")

    @property
    def n_features(self) -> int:
        return self.encoder.input_size

    @classmethod
    def initialize(cls, n_features: int, config: DynImpConfig, seed: int = 0) -> "DynImpModel":
        rng = np.random.default_rng(seed)
        return cls(
            encoder=LstmParams.initialize(n_features, config.hidden_size, rng),
            decoder=DenseParams.initialize(config.hidden_size, n_features, rng),
            config=config,
            feature_means=np.full(n_features, 0.5 if config.loss == "bce" else 0.0),
            seed=seed,
        )

    @classmethod
    def zeros(cls, n_features: int, config: DynImpConfig) -> "DynImpModel":
        return cls(LstmParams.zeros(n_features, config.hidden_size),
                   DenseParams.zeros(config.hidden_size, n_features),
                   config, np.zeros(n_features))

    def named(self) -> ParamDict:
        return {**self.encoder.named(ENCODER), **self.decoder.named(DECODER)}

    def with_params(self, named: ParamDict, **changes) -> "DynImpModel":
        return replace(self, encoder=LstmParams.from_named(named, ENCODER),
                       decoder=DenseParams.from_named(named, DECODER), **changes)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    effective_mask: MaskMatrix
    lstm_caches: List[GateCache]
    dense_cache: DenseCache


def corrupt(
    x: np.ndarray, mask: MaskMatrix, spec: CorruptionSpec, rng: Optional[np.random.Generator] = None
) -> Tuple[np.ndarray, MaskMatrix]:
    """Bernoulli dropout; a dropped cell also counts as missing for padding."""
    rng = rng or np.random.default_rng(spec.seed)
    keep = rng.random(np.shape(x)) < spec.p
    return np.where(keep, x, 0.0), np.asarray(mask, dtype=bool) & keep


def strategy_padding(
    values: np.ndarray, mask: MaskMatrix, strategy: str, k: int, means: np.ndarray
) -> PaddingMatrix:
    """Padding matrix of one T x F window: the strategy's estimate at missing cells, 0 elsewhere."""
    if not mask.any():
        # nothing observed: zero padding stays zero, the other strategies fall back to the feature means
        if strategy == "zero":
            return np.zeros(mask.shape)
        return np.broadcast_to(means, mask.shape).copy()
    window = Window(values, mask, label_id=0)
    if strategy == "knn":
        return build_padding(window, k, means)
    estimates = get_imputer(strategy, k=k, means=means)(window).values
    return np.where(mask, 0.0, estimates)


def prepare_inputs(
    values: np.ndarray,
    masks: np.ndarray,
    config: DynImpConfig,
    means: np.ndarray,
    spec: CorruptionSpec,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Corrupts a (B, T, F) batch and pads it window by window; returns inputs and effective masks."""
    corrupted, effective = corrupt(values, masks, spec, rng)
    inputs = np.empty_like(corrupted)
    for b in range(len(corrupted)):
        padding = strategy_padding(corrupted[b], effective[b], config.padding_strategy, config.k, means)
        inputs[b] = combine_arrays(corrupted[b], effective[b], padding)
    return inputs, effective


def _check_domain(values: np.ndarray, masks: np.ndarray, config: DynImpConfig) -> None:
    if config.loss != "bce":
        return
    observed = values[masks]
    if observed.size and (observed.min() < -SCALE_TOLERANCE or observed.max() > 1.0 + SCALE_TOLERANCE):
        raise ScaleDomainError(
            f"observed values span [{observed.min():.4g}, {observed.max():.4g}]; bce needs inputs scaled to [0, 1]")


def forward_inputs(named: ParamDict, inputs: np.ndarray, config: DynImpConfig) -> Tuple[np.ndarray, List[GateCache], DenseCache]:
    encoder = LstmParams.from_named(named, ENCODER)
    decoder = DenseParams.from_named(named, DECODER)
    hs, lstm_caches, _ = lstm_sequence_forward(encoder, inputs)
    z, dense_cache = dense_forward(decoder, hs, config.output_activation)
    return z, lstm_caches, dense_cache


def forward_batch(
    model: DynImpModel,
    values: np.ndarray,
    masks: np.ndarray,
    spec: CorruptionSpec,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    values = np.asarray(values, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    if values.shape[-1] != model.n_features:
        raise ShapeMismatchError(f"windows have {values.shape[-1]} features, model expects {model.n_features}")
    _check_domain(values, masks, model.config)
    inputs, effective = prepare_inputs(values, masks, model.config, model.feature_means, spec, rng)
    z, lstm_caches, dense_cache = forward_inputs(model.named(), inputs, model.config)
    return z, ForwardCache(inputs, effective, lstm_caches, dense_cache)


def forward(
    model: DynImpModel, window: Window, spec: CorruptionSpec, rng: Optional[np.random.Generator] = None
) -> Tuple[np.ndarray, ForwardCache]:
    """Reconstruction z (T x F) of one window."""
    z, cache = forward_batch(model, window.values[None], window.mask[None], spec, rng)
    return z[0], cache


def _loss_and_grad(z: np.ndarray, x: np.ndarray, train_mask: MaskMatrix, mode: str) -> Tuple[float, np.ndarray]:
    included = int(np.count_nonzero(train_mask))
    if included == 0:
        raise EmptyWindowError("no observed cell enters the reconstruction loss")
    x = np.where(train_mask, x, 0.0)
    if mode == "bce":
        zc = np.clip(z, BCE_CLAMP, 1.0 - BCE_CLAMP)
        cells = -(x * np.log(zc) + (1.0 - x) * np.log(1.0 - zc))
        inside = (z > BCE_CLAMP) & (z < 1.0 - BCE_CLAMP)
        dz = np.where(train_mask & inside, (zc - x) / (zc * (1.0 - zc)), 0.0)
    elif mode == "mse":
        cells = (z - x) ** 2
        dz = np.where(train_mask, 2.0 * (z - x), 0.0)
    else:
        raise ValueError(f"unknown loss mode '{mode}'")
    total = float(np.sum(np.where(train_mask, cells, 0.0)))
    return total / included, dz / included


def loss(z: np.ndarray, x: np.ndarray, train_mask: MaskMatrix, mode: str = "bce") -> float:
    """Mean reconstruction loss over cells where train_mask is set."""
    return _loss_and_grad(np.asarray(z, dtype=np.float64), np.asarray(x, dtype=np.float64),
                          np.asarray(train_mask, dtype=bool), mode)[0]


def pipeline_loss(
    named: ParamDict, inputs: np.ndarray, targets: np.ndarray, train_mask: np.ndarray, config: DynImpConfig
) -> Tuple[float, ParamDict]:
    """Loss and exact gradients for fixed (already corrupted and padded) inputs."""
    z, lstm_caches, dense_cache = forward_inputs(named, inputs, config)
    value, dz = _loss_and_grad(z, targets, train_mask, config.loss)
    decoder = DenseParams.from_named(named, DECODER)
    encoder = LstmParams.from_named(named, ENCODER)
    dec_grads, dhs = dense_backward(decoder, dense_cache, dz)
    enc_grads, _ = lstm_backward(encoder, lstm_caches, dhs)
    return value, {**enc_grads.named(ENCODER), **dec_grads.named(DECODER)}


def loss_closure(model: DynImpModel, window: Window, spec: CorruptionSpec):
    """Deterministic closure over the model parameters with corruption and padding frozen."""
    values, masks = window.values[None], window.mask[None]
    inputs, _ = prepare_inputs(values, masks, model.config, model.feature_means, spec)

    def closure(named: ParamDict) -> Tuple[float, ParamDict]:
        return pipeline_loss(named, inputs, values, masks, model.config)

    return closure


def train(
    model: DynImpModel, dataset: Dataset, config: Optional[DynImpConfig] = None, seed: int = 0
) -> Tuple[DynImpModel, List[float]]:
    """Mini-batch Adam on the masked reconstruction loss.

    Every epoch shuffles the windows and draws fresh corruption, so the
    padding is recomputed for each window on every pass.
    """
    config = config or model.config
    if config.epochs == 0 or not len(dataset):
        return model, []
    if dataset.n_features != model.n_features:
        raise ShapeMismatchError(f"dataset has {dataset.n_features} features, model expects {model.n_features}")
    values = dataset.values_array()
    masks = dataset.mask_array()
    _check_domain(values, masks, config)

    rng = np.random.default_rng(seed)
    means = feature_means(dataset)
    spec = CorruptionSpec(config.corruption_p, seed)
    params = model.named()
    adam = AdamState.zeros_like(params)
    epoch_losses: List[float] = []
    logger.info(f"Training DynImp ({config.padding_strategy} padding, H={config.hidden_size}) "
                f"on {len(dataset)} windows for {config.epochs} epochs")
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(values))
        batch_losses = []
        for batch, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            inputs, _ = prepare_inputs(values[idx], masks[idx], config, means, spec, rng)
            value, grads = pipeline_loss(params, inputs, values[idx], masks[idx], config)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, batch, value)
            grads, _ = clip_global_norm(grads, config.clip_norm)
            params, adam = adam_step(params, grads, adam, config.adam)
            batch_losses.append(value)
        epoch_losses.append(float(np.mean(batch_losses)))
        logger.info(f"epoch={epoch} loss={epoch_losses[-1]:.6f}")
    trained = model.with_params(params, config=config, feature_means=means,
                                training_log=model.training_log + tuple(epoch_losses), seed=seed)
    return trained, epoch_losses


def impute_batch(model: DynImpModel, values: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Imputed (B, T, F) values: observed cells pass through, missing cells take the decoder output."""
    z, _ = forward_batch(model, values, masks, CorruptionSpec(p=1.0))
    return np.where(masks, values, z)


def impute(model: DynImpModel, window: Window) -> ImputedWindow:
    if window.shape[1] != model.n_features:
        raise ShapeMismatchError(f"window has {window.shape[1]} features, model expects {model.n_features}")
    imputed = impute_batch(model, window.values[None], window.mask[None])
    return ImputedWindow(imputed[0], window.mask)


def impute_windows(model: DynImpModel, windows: Sequence[Window], batch_size: int = 256) -> List[ImputedWindow]:
    if not windows:
        return []
    result: List[ImputedWindow] = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start:start + batch_size]
        values = np.stack([w.values for w in chunk])
        masks = np.stack([w.mask for w in chunk])
        imputed = impute_batch(model, values, masks)
        result.extend(ImputedWindow(imputed[i], chunk[i].mask) for i in range(len(chunk)))
    return result
