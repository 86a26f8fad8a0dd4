import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import aiosqlite
import numpy as np
from loguru import logger

from dynimp.core.data_model import Dataset, ScalingParams, Window
from dynimp.core.dynimp_model import DynImpConfig, DynImpModel
from dynimp.database.database import DatabaseManager, read_meta
from dynimp.exceptions import FormatVersionError

_FLOAT = np.dtype("<f8")
_BYTE = np.dtype("u1")


def _to_blob(array: np.ndarray, dtype: np.dtype = _FLOAT) -> bytes:
    return np.ascontiguousarray(array, dtype=dtype).tobytes()


def _from_blob(blob: bytes, rows: int, cols: int, dtype: np.dtype = _FLOAT) -> np.ndarray:
    """rows == 0 marks a vector of length `cols`."""
    array = np.frombuffer(blob, dtype=dtype)
    if array.size != max(rows, 1) * cols:
        raise FormatVersionError(f"array blob holds {array.size} items, expected {rows}x{cols}")
    shape = (cols,) if rows == 0 else (rows, cols)
    return array.reshape(shape).astype(np.float64 if dtype == _FLOAT else dtype)


def _matrix_rows(arrays: Dict[str, np.ndarray]) -> List[Tuple[str, int, int, bytes]]:
    rows = []
    for name, array in arrays.items():
        array = np.asarray(array, dtype=np.float64)
        n_rows = 0 if array.ndim == 1 else array.shape[0]
        rows.append((name, n_rows, array.shape[-1], _to_blob(array)))
    return rows


async def _read_matrices(db: aiosqlite.Connection, table: str) -> Dict[str, np.ndarray]:
    cursor = await db.execute(f"SELECT name, rows, cols, data FROM {table} ORDER BY name")
    return {name: _from_blob(data, rows, cols) for name, rows, cols, data in await cursor.fetchall()}


async def _write_scaling(db: aiosqlite.Connection, scaling: Optional[ScalingParams]) -> None:
    if scaling is None:
        return
    await db.execute("INSERT INTO meta (key, value) VALUES ('scaling_mode', ?)", (scaling.mode,))
    await db.executemany(
        "INSERT INTO scaling (name, rows, cols, data) VALUES (?, ?, ?, ?)",
        _matrix_rows({"low": scaling.low, "high": scaling.high, "constant": scaling.constant.astype(np.float64)}),
    )


async def _read_scaling(db: aiosqlite.Connection, meta: Dict[str, str]) -> Optional[ScalingParams]:
    if "scaling_mode" not in meta:
        return None
    arrays = await _read_matrices(db, "scaling")
    return ScalingParams(meta["scaling_mode"], arrays["low"], arrays["high"], arrays["constant"] != 0.0)


class DatasetStore:
    @staticmethod
    async def save(dataset: Dataset, path: Path) -> None:
        """Writes every window with its mask, labels, feature names and scaling."""
        manager = DatabaseManager(path, "dataset")
        db = await manager.create()
        try:
            await db.execute("INSERT INTO meta (key, value) VALUES ('scaled', ?)", (str(int(dataset.scaled)),))
            await db.executemany("INSERT INTO features (idx, name) VALUES (?, ?)", list(enumerate(dataset.feature_names)))
            await db.executemany("INSERT INTO labels (idx, name) VALUES (?, ?)", list(enumerate(dataset.label_names)))
            await _write_scaling(db, dataset.scaling)
            await db.executemany(
                """
                INSERT INTO windows (idx, user, start, label_id, steps, features, vals, mask)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                """,
                [
                    (i, w.user, w.start, w.label_id, w.shape[0], w.shape[1],
                     _to_blob(w.values), _to_blob(w.mask, _BYTE))
                    for i, w in enumerate(dataset.windows)
                ],
            )
        except Exception:
            await db.close()
            manager.staging_path.unlink(missing_ok=True)
            raise
        await manager.publish(db)
        logger.info(f"Dataset saved: {len(dataset)} windows, {dataset.n_features} features")

    @staticmethod
    async def load(path: Path) -> Dataset:
        db = await DatabaseManager(path, "dataset").open()
        try:
            meta = await read_meta(db)
            cursor = await db.execute("SELECT name FROM features ORDER BY idx")
            feature_names = [row[0] for row in await cursor.fetchall()]
            cursor = await db.execute("SELECT name FROM labels ORDER BY idx")
            label_names = [row[0] for row in await cursor.fetchall()]
            scaling = await _read_scaling(db, meta)
            cursor = await db.execute(
                "SELECT user, start, label_id, steps, features, vals, mask FROM windows ORDER BY idx")
            windows = [
                Window(_from_blob(vals, steps, n), _from_blob(mask, steps, n, _BYTE).astype(bool),
                       label_id, user=user, start=start)
                for user, start, label_id, steps, n, vals, mask in await cursor.fetchall()
            ]
        finally:
            await db.close()
        logger.debug(f"Loaded {len(windows)} windows from {path}")
        return Dataset(windows, feature_names, label_names, scaling=scaling, scaled=meta.get("scaled") == "1")


class CheckpointStore:
    @staticmethod
    async def save(model: DynImpModel, path: Path) -> None:
        """Writes parameters, feature means, scaling, loss log, config and seed."""
        manager = DatabaseManager(path, "checkpoint")
        db = await manager.create()
        try:
            await db.executemany(
                "INSERT INTO meta (key, value) VALUES (?, ?)",
                [("seed", str(model.seed)), ("config", model.config.model_dump_json())],
            )
            await db.executemany("INSERT INTO params (name, rows, cols, data) VALUES (?, ?, ?, ?)",
                                 _matrix_rows(model.named()))
            await db.executemany("INSERT INTO feature_means (idx, value) VALUES (?, ?)",
                                 [(i, float(v)) for i, v in enumerate(model.feature_means)])
            await _write_scaling(db, model.scaling)
            await db.executemany("INSERT INTO loss_log (epoch, loss) VALUES (?, ?)",
                                 [(i + 1, float(v)) for i, v in enumerate(model.training_log)])
        except Exception:
            await db.close()
            manager.staging_path.unlink(missing_ok=True)
            raise
        await manager.publish(db)

    @staticmethod
    async def load(path: Path) -> DynImpModel:
        db = await DatabaseManager(path, "checkpoint").open()
        try:
            meta = await read_meta(db)
            config = DynImpConfig.model_validate(json.loads(meta["config"]))
            named = await _read_matrices(db, "params")
            cursor = await db.execute("SELECT value FROM feature_means ORDER BY idx")
            means = np.array([row[0] for row in await cursor.fetchall()], dtype=np.float64)
            scaling = await _read_scaling(db, meta)
            cursor = await db.execute("SELECT loss FROM loss_log ORDER BY epoch")
            log = tuple(row[0] for row in await cursor.fetchall())
        finally:
            await db.close()
        template = DynImpModel.zeros(len(means), config)
        model = template.with_params(named, feature_means=means, training_log=log,
                                     seed=int(meta["seed"]), scaling=scaling)
        logger.debug(f"Loaded checkpoint {path} ({len(log)} logged epochs)")
        return model
