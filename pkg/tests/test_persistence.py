import asyncio
import sqlite3

import numpy as np
import pytest

from dynimp.core.data_model import fit_scaling, scale_dataset
from dynimp.core.dynimp_model import DynImpConfig, DynImpModel, train
from dynimp.database.models import CheckpointStore, DatasetStore
from dynimp.exceptions import FormatVersionError


@pytest.fixture
def dataset(labelled_dataset, rng):
    base = labelled_dataset(n_windows=12, steps=5, features=3)
    windows = []
    for w in base.windows:
        mask = rng.random(w.shape) < 0.8
        mask[0, 0] = True
        windows.append(w.with_mask(mask))
    return base.with_windows(windows)


@pytest.fixture
def trained_model(dataset):
    config = DynImpConfig(hidden_size=3, epochs=2, batch_size=4, k=2)
    model = DynImpModel.initialize(3, config, seed=4)
    model, _ = train(model, dataset, config, seed=4)
    return model


def assert_same_dataset(a, b):
    assert a.feature_names == b.feature_names
    assert a.label_names == b.label_names
    assert len(a) == len(b)
    for wa, wb in zip(a.windows, b.windows):
        assert np.array_equal(wa.values, wb.values)
        assert np.array_equal(wa.mask, wb.mask)
        assert (wa.label_id, wa.user, wa.start) == (wb.label_id, wb.user, wb.start)


class TestDatasetStore:
    def test_round_trip_is_exact(self, dataset, tmp_path):
        path = tmp_path / "data.db"
        asyncio.run(DatasetStore.save(dataset, path))
        loaded = asyncio.run(DatasetStore.load(path))
        assert_same_dataset(dataset, loaded)
        assert loaded.scaling is None
        assert not loaded.scaled

    def test_scaling_is_kept(self, dataset, tmp_path):
        scaled = scale_dataset(dataset, fit_scaling(dataset))
        path = tmp_path / "scaled.db"
        asyncio.run(DatasetStore.save(scaled, path))
        loaded = asyncio.run(DatasetStore.load(path))
        assert loaded.scaled
        assert loaded.scaling.mode == "minmax"
        assert np.array_equal(loaded.scaling.low, scaled.scaling.low)
        assert np.array_equal(loaded.scaling.constant, scaled.scaling.constant)
        assert_same_dataset(scaled, loaded)

    def test_saving_twice_gives_identical_bytes(self, dataset, tmp_path):
        a, b = tmp_path / "a.db", tmp_path / "b.db"
        asyncio.run(DatasetStore.save(dataset, a))
        asyncio.run(DatasetStore.save(dataset, b))
        assert a.read_bytes() == b.read_bytes()

    def test_no_staging_file_is_left(self, dataset, tmp_path):
        asyncio.run(DatasetStore.save(dataset, tmp_path / "data.db"))
        assert [p.name for p in tmp_path.iterdir()] == ["data.db"]


class TestCheckpointStore:
    def test_round_trip_is_exact(self, trained_model, tmp_path):
        path = tmp_path / "model.ckpt"
        asyncio.run(CheckpointStore.save(trained_model, path))
        loaded = asyncio.run(CheckpointStore.load(path))
        assert loaded.config == trained_model.config
        assert loaded.seed == trained_model.seed
        assert loaded.training_log == trained_model.training_log
        assert np.array_equal(loaded.feature_means, trained_model.feature_means)
        for name, value in trained_model.named().items():
            assert np.array_equal(loaded.named()[name], value), name

    def test_resaving_a_loaded_checkpoint_is_byte_identical(self, trained_model, tmp_path):
        first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        asyncio.run(CheckpointStore.save(trained_model, first))
        asyncio.run(CheckpointStore.save(asyncio.run(CheckpointStore.load(first)), second))
        assert first.read_bytes() == second.read_bytes()


class TestFormatChecks:
    def test_wrong_kind(self, dataset, tmp_path):
        path = tmp_path / "data.db"
        asyncio.run(DatasetStore.save(dataset, path))
        with pytest.raises(FormatVersionError, match="checkpoint"):
            asyncio.run(CheckpointStore.load(path))

    def test_version_mismatch(self, dataset, tmp_path):
        path = tmp_path / "data.db"
        asyncio.run(DatasetStore.save(dataset, path))
        with sqlite3.connect(path) as conn:
            conn.execute("UPDATE meta SET value = '2' WHERE key = 'format_version'")
        with pytest.raises(FormatVersionError, match="version 2"):
            asyncio.run(DatasetStore.load(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            asyncio.run(DatasetStore.load(tmp_path / "absent.db"))

    def test_not_a_container(self, tmp_path):
        path = tmp_path / "notes.db"
        path.write_text("just some text, long enough to not look like an empty database file\n" * 4)
        with pytest.raises(FormatVersionError):
            asyncio.run(DatasetStore.load(path))
