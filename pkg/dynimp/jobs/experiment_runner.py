import asyncio
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

from loguru import logger

from dynimp.config import RunConfig
from dynimp.core.data_model import Dataset
from dynimp.core.evaluation import AggregateResult, ExperimentResult, aggregate, run_cell


@dataclass(frozen=True)
class ExperimentReport:
    results: List[ExperimentResult]
    aggregates: List[AggregateResult]

    @property
    def errors(self) -> int:
        return sum(1 for r in self.results if r.error is not None)


def experiment_cells(config: RunConfig) -> List[Tuple[str, float, int]]:
    """Fixed cell order: level, then seed, then method."""
    return [(method, level, seed) for level in config.levels for seed in config.seeds for method in config.methods]


async def _run_one(
    executor: Optional[Executor], semaphore: asyncio.Semaphore,
    dataset: Dataset, cell: Tuple[str, float, int], config: RunConfig,
) -> ExperimentResult:
    method, level, seed = cell
    async with semaphore:
        logger.debug(f"Starting cell method={method} level={level} seed={seed}")
        if executor is None:
            return await asyncio.to_thread(run_cell, dataset, method, level, seed, config)
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(executor, run_cell, dataset, method, level, seed, config)


async def run_experiment(dataset: Dataset, config: RunConfig) -> ExperimentReport:
    """Runs every (method, level, seed) cell, at most `config.jobs` at once.

    Each cell depends only on its own arguments, so results are identical for
    any worker count; they are collected in cell order, not completion order.
    """
    cells = experiment_cells(config)
    logger.info(f"Running experiment: {len(config.methods)} methods x {len(config.levels)} levels x "
                f"{len(config.seeds)} seeds = {len(cells)} cells, jobs={config.jobs}")
    semaphore = asyncio.Semaphore(config.jobs)
    executor = ProcessPoolExecutor(max_workers=config.jobs) if config.jobs > 1 else None
    try:
        results = await asyncio.gather(*(_run_one(executor, semaphore, dataset, cell, config) for cell in cells))
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    aggregates = aggregate(results, config.methods, config.levels)
    report = ExperimentReport(list(results), aggregates)
    if report.errors:
        logger.warning(f"{report.errors} of {len(cells)} cells failed")
    else:
        logger.success(f"All {len(cells)} cells completed")
    return report
