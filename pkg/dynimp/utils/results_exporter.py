import asyncio
import csv
import json
import os
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from loguru import logger

from dynimp.config import RunConfig
from dynimp.core.evaluation import AggregateResult, ExperimentResult
from dynimp.presentation.tables import missingness_tier, table1, table2

FORMAT_VERSION = 1
RESULTS_FILE = "results.csv"
AGGREGATE_FILE = "aggregate.csv"
TABLE1_FILE = "table1.csv"
TABLE2_FILE = "table2.csv"
MANIFEST_FILE = "manifest.json"

_PACKAGES = ("numpy", "scipy", "pandas", "scikit-learn", "pydantic", "pydantic-settings", "aiosqlite", "loguru")


def _write_csv_sync(csv_path: Path, headers: List[str], rows: Sequence[Sequence[Any]]) -> None:
    try:
        os.makedirs(os.path.dirname(csv_path) or ".", exist_ok=True)
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            f.write(f"# format_version={FORMAT_VERSION}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(headers)
            writer.writerows(rows)
        logger.debug(f"Successfully wrote to {csv_path}")
    except Exception as e:
        logger.error(f"Failed to write to {csv_path}: {e}")
        raise


def _num(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def result_rows(results: Sequence[ExperimentResult]) -> List[List[str]]:
    return [[r.method, f"{r.level:g}", str(r.seed), _num(r.ba), _num(r.rmse), r.error or ""] for r in results]


def aggregate_rows(aggregates: Sequence[AggregateResult]) -> List[List[str]]:
    return [
        [a.method, f"{a.level:g}", missingness_tier(a.level), _num(a.mean_ba), _num(a.ci_half_width),
         str(a.seeds), _num(a.mean_rmse), str(a.errors)]
        for a in aggregates
    ]


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in _PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def _write_json_sync(path: Path, payload: Dict[str, Any]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug(f"Successfully wrote to {path}")


async def write_manifest(path: Path, command: str, config: RunConfig, wall_clock_seconds: float,
                         inputs: Optional[Dict[str, str]] = None, outputs: Optional[List[str]] = None) -> Path:
    """Echoes the resolved config, seeds and library versions of a run."""
    payload = {
        "format_version": FORMAT_VERSION,
        "command": command,
        "config": config.model_dump(mode="json"),
        "seed": config.seed,
        "seeds": list(config.seeds),
        "inputs": inputs or {},
        "outputs": outputs or [],
        "versions": package_versions(),
        "wall_clock_seconds": round(wall_clock_seconds, 3),
    }
    await asyncio.to_thread(_write_json_sync, path, payload)
    return path


async def export_experiment(out_dir: Path, results: Sequence[ExperimentResult],
                            aggregates: Sequence[AggregateResult], config: RunConfig) -> List[Path]:
    """Writes results.csv, aggregate.csv and the per-level and per-variant table CSVs."""
    out_dir = Path(out_dir)
    logger.info(f"Exporting experiment results to {out_dir}")
    files = [
        (out_dir / RESULTS_FILE, ["method", "level", "seed", "ba", "rmse", "error"], result_rows(results)),
        (out_dir / AGGREGATE_FILE,
         ["method", "level", "tier", "mean_ba", "ci_half_width", "seeds", "mean_rmse", "errors"],
         aggregate_rows(aggregates)),
        (out_dir / TABLE1_FILE, *table1(aggregates, config.methods, config.levels)),
        (out_dir / TABLE2_FILE, *table2(aggregates, config.methods, config.levels)),
    ]
    for path, headers, rows in files:
        await asyncio.to_thread(_write_csv_sync, path, headers, rows)
    logger.success(f"Exported {len(files)} result files to {out_dir}")
    return [path for path, _, _ in files]


async def export_loss_log(path: Path, losses: Sequence[float]) -> Path:
    rows = [[str(epoch), repr(float(loss))] for epoch, loss in enumerate(losses, start=1)]
    await asyncio.to_thread(_write_csv_sync, path, ["epoch", "loss"], rows)
    return path


def manifest_path(output: Path) -> Path:
    """Manifest written next to a single-file output."""
    return Path(f"{output}.manifest.json")
