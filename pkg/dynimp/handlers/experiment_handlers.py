import argparse
import asyncio
import time
from pathlib import Path

from loguru import logger

from dynimp.config import RunConfig
from dynimp.core.data_model import unscale_dataset
from dynimp.database.models import DatasetStore
from dynimp.dispatcher import Router, argument
from dynimp.handlers.arguments import GRAD_CHECK_ARGS, LOG_ARGS, MODEL_ARGS, path_argument
from dynimp.handlers.grad_check_handlers import report_lines, run_grad_check
from dynimp.jobs.experiment_runner import run_experiment
from dynimp.presentation.tables import experiment_report
from dynimp.utils.results_exporter import MANIFEST_FILE, export_experiment, write_manifest

router = Router("experiment")


@router.command(
    "experiment", "run the (method x level x seed) imputation benchmark on a dataset file",
    path_argument("dataset", "dataset file"),
    path_argument("--out-dir", "directory for result CSVs and the manifest", default=Path("results")),
    argument("--methods", help="comma-separated method names"),
    argument("--levels", help="comma-separated missingness levels in [0, 1)"),
    argument("--seeds", help="comma-separated distinct seeds"),
    argument("--jobs", type=int, help="parallel worker processes"),
    argument("--train-fraction", type=float),
    argument("--classifier-c", type=float),
    argument("--scaling-mode", choices=["minmax", "zscore"]),
    argument("--grad-check", action="store_true", help="check gradients first and stop above tolerance"),
    *MODEL_ARGS,
    *GRAD_CHECK_ARGS,
    *LOG_ARGS,
)
async def cmd_experiment(args: argparse.Namespace, config: RunConfig) -> int:
    started = time.perf_counter()
    if args.grad_check:
        report = await asyncio.to_thread(run_grad_check, config)
        print("\n".join(report_lines(report)))
        if not report.passed:
            logger.error(f"Gradient check failed ({report.max_rel_error:.3e} > {report.tolerance:.1e}); "
                         f"experiment not started")
            return 1

    dataset = unscale_dataset(await DatasetStore.load(args.dataset))
    result = await run_experiment(dataset, config)
    outputs = await export_experiment(args.out_dir, result.results, result.aggregates, config)
    await write_manifest(Path(args.out_dir) / MANIFEST_FILE, "experiment", config, time.perf_counter() - started,
                         inputs={"dataset": str(args.dataset)}, outputs=[p.name for p in outputs])
    print(experiment_report(result.aggregates, config.methods, config.levels, len(result.results), result.errors))
    return 1 if result.errors else 0
