from functools import lru_cache
from pathlib import Path
from typing import Any, List

import yaml

RESOURCES_DIR = Path(__file__).parent.parent / "resources"


@lru_cache(maxsize=None)
def _load_yaml(name: str) -> dict:
    """Loads a YAML resource bundled with the package."""
    with open(RESOURCES_DIR / name, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def _lookup(texts: dict, key: str) -> Any:
    value: Any = texts
    for k in key.split('.'):
        value = value[k]
    return value


def get_text(key: str, **kwargs) -> Any:
    try:
        value = _lookup(_load_yaml("texts.yaml"), key)
    except KeyError:
        return key
    if kwargs and isinstance(value, str):
        return value.format(**kwargs)
    return value


def get_label_names(mode: str) -> List[str]:
    """Label vocabulary for 'movement4' or 'combined16'."""
    labels = _load_yaml("labels.yaml")
    movements = list(labels["movement4"])
    if mode == "movement4":
        return movements
    if mode == "combined16":
        sep = labels["combined_separator"]
        return [f"{m}{sep}{loc}" for m in movements for loc in labels["phone_locations"]]
    raise ValueError(f"unknown label mode '{mode}'")


def label_separator() -> str:
    return _load_yaml("labels.yaml")["combined_separator"]
