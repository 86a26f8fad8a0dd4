import argparse
import asyncio
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from dynimp.config import RunConfig
from dynimp.core.data_model import Dataset, ScalingParams, fit_scaling, scale_dataset, unscale_dataset
from dynimp.core.dynimp_model import DynImpConfig, DynImpModel, impute_windows, train
from dynimp.database.models import CheckpointStore, DatasetStore
from dynimp.dispatcher import Router, argument
from dynimp.handlers.arguments import LOG_ARGS, MODEL_ARGS, path_argument
from dynimp.utils.results_exporter import export_loss_log, manifest_path, write_manifest
from dynimp.utils.text_manager import get_text

router = Router("model")


def scaled_for_model(dataset: Dataset, scaling: Optional[ScalingParams], mode: str) -> Tuple[Dataset, ScalingParams]:
    """Brings a dataset into the model's scaled space, fitting scaling when none is given."""
    if dataset.scaled and dataset.scaling is not None and scaling is None:
        return dataset, dataset.scaling
    raw = unscale_dataset(dataset)
    scaling = scaling or fit_scaling(raw, mode)
    return scale_dataset(raw, scaling, clip=True), scaling


@router.command(
    "train", "train a DynImp model on a dataset file",
    path_argument("dataset", "dataset file"),
    path_argument("--out", "checkpoint file to write", required=True),
    path_argument("--resume", "continue from this checkpoint"),
    argument("--scaling-mode", choices=["minmax", "zscore"]),
    *MODEL_ARGS,
    *LOG_ARGS,
)
async def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    started = time.perf_counter()
    dataset = await DatasetStore.load(args.dataset)
    resume: Optional[Path] = getattr(args, "resume", None)
    if resume is not None:
        model = await CheckpointStore.load(resume)
        model_config = model.config.model_copy(update={"epochs": config.epochs})
        scaled, _ = scaled_for_model(dataset, model.scaling, config.scaling_mode)
        logger.info(f"Resuming from {resume} after {len(model.training_log)} epochs")
    else:
        model_config = DynImpConfig.from_run_config(config)
        scaled, scaling = scaled_for_model(dataset, None, config.scaling_mode)
        model = replace(DynImpModel.initialize(dataset.n_features, model_config, seed=config.seed), scaling=scaling)

    trained, losses = await asyncio.to_thread(train, model, scaled, model_config, config.seed)
    await CheckpointStore.save(trained, args.out)
    await export_loss_log(Path(f"{args.out}.loss.csv"), trained.training_log)
    inputs = {"dataset": str(args.dataset), **({"resume": str(resume)} if resume else {})}
    await write_manifest(manifest_path(args.out), "train", config, time.perf_counter() - started,
                         inputs=inputs, outputs=[str(args.out), f"{args.out}.loss.csv"])
    final = f"{losses[-1]:.6f}" if losses else "n/a"
    print(get_text("train.summary", path=args.out, epochs=len(losses), loss=final))
    return 0


@router.command(
    "impute", "fill every missing cell of a dataset file with a trained model",
    path_argument("dataset", "dataset file"),
    path_argument("checkpoint", "checkpoint written by train"),
    path_argument("--out", "imputed dataset file to write", required=True),
    *LOG_ARGS,
)
async def cmd_impute(args: argparse.Namespace, config: RunConfig) -> int:
    started = time.perf_counter()
    dataset = await DatasetStore.load(args.dataset)
    model = await CheckpointStore.load(args.checkpoint)
    if dataset.n_features != model.n_features:
        logger.error(f"dataset has {dataset.n_features} features, checkpoint expects {model.n_features}")
        return 1
    scaled, scaling = scaled_for_model(dataset, model.scaling, config.scaling_mode)
    imputed = await asyncio.to_thread(impute_windows, model, scaled.windows)

    windows = []
    for original, filled in zip(dataset.windows, imputed):
        estimates = scaling.unscale(filled.values)
        if dataset.scaled:
            estimates = dataset.scaling.scale(estimates)
        # observed cells are copied from the input untouched
        values = np.where(original.mask, original.values, estimates)
        windows.append(original.with_values(values, np.ones_like(original.mask)))
    output = dataset.with_windows(windows)
    await DatasetStore.save(output, args.out)
    await write_manifest(manifest_path(args.out), "impute", config, time.perf_counter() - started,
                         inputs={"dataset": str(args.dataset), "checkpoint": str(args.checkpoint)},
                         outputs=[str(args.out)])
    cells = int(sum(np.count_nonzero(~w.mask) for w in dataset.windows))
    print(get_text("impute.summary", windows=len(output), cells=cells, path=args.out))
    return 0
