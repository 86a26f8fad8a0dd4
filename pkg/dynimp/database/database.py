import os
from pathlib import Path
from typing import Dict, List

import aiosqlite
from loguru import logger

from dynimp.exceptions import FormatVersionError

FORMAT_VERSION = 1


class DatabaseManager:
    """
    Creates and validates the SQLite containers used for datasets and
    model checkpoints. Every container carries a `meta` table with its kind
    and format version.
    """
    META_SQL = "CREATE TABLE meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);"

    SCHEMA_SQL: Dict[str, List[str]] = {
        "dataset": [
            """
            CREATE TABLE features (
                idx INTEGER PRIMARY KEY, name TEXT NOT NULL
            );
            """,
            """
            CREATE TABLE labels (
                idx INTEGER PRIMARY KEY, name TEXT NOT NULL
            );
            """,
            """
            CREATE TABLE scaling (
                name TEXT PRIMARY KEY, rows INTEGER NOT NULL, cols INTEGER NOT NULL, data BLOB NOT NULL
            );
            """,
            """
            CREATE TABLE windows (
                idx INTEGER PRIMARY KEY, user INTEGER NOT NULL, start INTEGER NOT NULL,
                label_id INTEGER NOT NULL, steps INTEGER NOT NULL, features INTEGER NOT NULL,
                vals BLOB NOT NULL, mask BLOB NOT NULL
            );
            """,
        ],
        "checkpoint": [
            """
            CREATE TABLE params (
                name TEXT PRIMARY KEY, rows INTEGER NOT NULL, cols INTEGER NOT NULL, data BLOB NOT NULL
            );
            """,
            """
            CREATE TABLE scaling (
                name TEXT PRIMARY KEY, rows INTEGER NOT NULL, cols INTEGER NOT NULL, data BLOB NOT NULL
            );
            """,
            """
            CREATE TABLE feature_means (
                idx INTEGER PRIMARY KEY, value REAL NOT NULL
            );
            """,
            """
            CREATE TABLE loss_log (
                epoch INTEGER PRIMARY KEY, loss REAL NOT NULL
            );
            """,
        ],
    }

    def __init__(self, db_path: Path, kind: str):
        if kind not in self.SCHEMA_SQL:
            raise ValueError(f"unknown container kind '{kind}'")
        self.db_path = Path(db_path)
        self.kind = kind

    @property
    def staging_path(self) -> Path:
        return self.db_path.with_name(self.db_path.name + ".tmp")

    async def create(self) -> aiosqlite.Connection:
        """Opens a fresh container at the staging path with schema and meta rows in place."""
        staging = self.staging_path
        staging.parent.mkdir(parents=True, exist_ok=True)
        if staging.exists():
            staging.unlink()
        db = await aiosqlite.connect(staging)
        await db.execute(self.META_SQL)
        for statement in self.SCHEMA_SQL[self.kind]:
            await db.execute(statement)
        await db.executemany(
            "INSERT INTO meta (key, value) VALUES (?, ?)",
            [("kind", self.kind), ("format_version", str(FORMAT_VERSION))],
        )
        logger.debug(f"Created {self.kind} container schema at {staging}")
        return db

    async def publish(self, db: aiosqlite.Connection) -> None:
        """Commits, closes and atomically moves the staging file over the target."""
        await db.commit()
        await db.close()
        os.replace(self.staging_path, self.db_path)
        logger.success(f"Wrote {self.kind} container {self.db_path}")

    async def open(self) -> aiosqlite.Connection:
        if not self.db_path.is_file():
            raise FileNotFoundError(f"{self.kind} file not found: {self.db_path}")
        db = await aiosqlite.connect(self.db_path)
        try:
            await self._verify(db)
        except Exception:
            await db.close()
            raise
        return db

    async def _verify(self, db: aiosqlite.Connection) -> None:
        try:
            cursor = await db.execute("SELECT key, value FROM meta")
            meta = dict(await cursor.fetchall())
        except aiosqlite.DatabaseError as e:
            raise FormatVersionError(f"{self.db_path} is not a {self.kind} container: {e}") from e
        if meta.get("kind") != self.kind:
            raise FormatVersionError(f"{self.db_path} holds a '{meta.get('kind')}', expected a '{self.kind}'")
        if meta.get("format_version") != str(FORMAT_VERSION):
            raise FormatVersionError(
                f"{self.db_path} has format version {meta.get('format_version')}, supported: {FORMAT_VERSION}")


async def read_meta(db: aiosqlite.Connection) -> Dict[str, str]:
    cursor = await db.execute("SELECT key, value FROM meta ORDER BY key")
    return dict(await cursor.fetchall())
