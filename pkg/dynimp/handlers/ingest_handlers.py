import argparse
import asyncio
import time

from dynimp.config import RunConfig
from dynimp.core.data_model import IngestSchema, cross_channel_correlation, generate_synthetic, ingest_csv
from dynimp.database.models import DatasetStore
from dynimp.dispatcher import Router, argument
from dynimp.handlers.arguments import LOG_ARGS, WINDOW_ARGS, path_argument
from dynimp.utils.results_exporter import manifest_path, write_manifest
from dynimp.utils.text_manager import get_label_names, get_text

router = Router("ingest")


@router.command(
    "ingest", "bin and window a raw sensor CSV into a dataset file",
    path_argument("csv", "raw sensor CSV"),
    path_argument("--out", "dataset file to write", required=True),
    argument("--bin-seconds", type=int),
    argument("--timestamp-column"),
    argument("--label-column"),
    argument("--user-column"),
    argument("--feature-columns", help="comma-separated feature columns, default: all others"),
    *WINDOW_ARGS,
    *LOG_ARGS,
)
async def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> int:
    started = time.perf_counter()
    schema = IngestSchema(
        timestamp_column=getattr(args, "timestamp_column", "timestamp"),
        label_column=getattr(args, "label_column", "label"),
        user_column=getattr(args, "user_column", None),
        feature_columns=[c.strip() for c in args.feature_columns.split(",")] if hasattr(args, "feature_columns") else None,
        bin_seconds=config.bin_seconds,
    )
    dataset = await asyncio.to_thread(
        ingest_csv, args.csv, schema, config.window_length, config.effective_stride, get_label_names(config.label_mode))
    await DatasetStore.save(dataset, args.out)
    await write_manifest(manifest_path(args.out), "ingest", config, time.perf_counter() - started,
                         inputs={"csv": str(args.csv)}, outputs=[str(args.out)])
    print(get_text("ingest.summary", windows=len(dataset), features=dataset.n_features, labels=dataset.n_labels))
    return 0


@router.command(
    "synth", "generate a synthetic correlated-channel dataset",
    path_argument("--out", "dataset file to write", required=True),
    argument("--users", type=int),
    argument("--minutes", type=int, help="one-minute frames per user"),
    argument("--features", type=int),
    argument("--coupling", type=float, help="weight of the shared latent driver in [0, 1]"),
    argument("--inherent-missing", type=float, help="probability of removing each generated cell"),
    argument("--seed", type=int),
    *WINDOW_ARGS,
    *LOG_ARGS,
)
async def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    started = time.perf_counter()
    dataset = await asyncio.to_thread(
        generate_synthetic, config.users, config.minutes, config.features, config.coupling, config.seed,
        config.window_length, config.effective_stride, config.inherent_missing, get_label_names(config.label_mode))
    await DatasetStore.save(dataset, args.out)
    await write_manifest(manifest_path(args.out), "synth", config, time.perf_counter() - started,
                         outputs=[str(args.out)])
    print(get_text("synth.summary", windows=len(dataset), features=dataset.n_features, labels=dataset.n_labels,
                   correlation=cross_channel_correlation(dataset)))
    return 0
