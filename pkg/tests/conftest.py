import os

import numpy as np
import pytest
from loguru import logger

from dynimp.core.data_model import Dataset, Window
from dynimp.utils.text_manager import get_label_names


def _random_window(rng: np.random.Generator, steps: int, features: int, observed: float = 0.7,
                   label: int = 0) -> Window:
    values = rng.uniform(0.0, 1.0, (steps, features))
    mask = rng.random((steps, features)) < observed
    mask[rng.integers(steps), rng.integers(features)] = True
    return Window(np.where(mask, values, 0.0), mask, label)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_window():
    return _random_window


@pytest.fixture
def labelled_dataset():
    """Fully observed windows whose level depends on the label; values in [0, 1]."""
    def build(n_windows: int = 48, steps: int = 6, features: int = 3, seed: int = 0) -> Dataset:
        rng = np.random.default_rng(seed)
        windows = []
        for i in range(n_windows):
            label = i % 4
            values = np.clip(0.15 + 0.2 * label + rng.normal(0.0, 0.03, (steps, features)), 0.0, 1.0)
            windows.append(Window(values, np.ones((steps, features), dtype=bool), label, user=0, start=i * steps))
        return Dataset(windows, [f"f{j}" for j in range(features)], get_label_names("movement4"))
    return build


@pytest.fixture(autouse=True)
def quiet_logger():
    logger.remove()
    yield
    logger.remove()


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in list(os.environ):
        if key.upper().startswith("DYNIMP_"):
            monkeypatch.delenv(key)
