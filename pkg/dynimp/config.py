import os
from contextvars import ContextVar
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Type

from dotenv import dotenv_values
from loguru import logger
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, NoDecode, PydanticBaseSettingsSource, SettingsConfigDict

from dynimp.exceptions import ConfigError

ENV_PREFIX = "DYNIMP_"

BASELINE_METHODS = ("zero", "mean", "interp", "locf", "knn", "indicator")
DYNIMP_METHODS = ("dynimp-zero", "dynimp-mean", "dynimp-interp", "dynimp-knn", "dynimp-knn-indicator")
KNOWN_METHODS = BASELINE_METHODS + DYNIMP_METHODS

PaddingStrategy = Literal["zero", "mean", "interp", "knn"]
LossMode = Literal["bce", "mse"]
ScalingMode = Literal["minmax", "zscore"]
LabelMode = Literal["movement4", "combined16"]


_config_file: ContextVar[Optional[Path]] = ContextVar("dynimp_config_file", default=None)


def _split_csv(v: Any) -> Any:
    if isinstance(v, str):
        return [x.strip() for x in v.split(",") if x.strip()]
    return v


class ConfigFileSettingsSource(PydanticBaseSettingsSource):
    """Flat key=value file read with python-dotenv; keys are field names without the env prefix."""

    def __init__(self, settings_cls: Type[BaseSettings], path: Optional[Path]):
        super().__init__(settings_cls)
        self.values = read_config_file(path) if path else {}

    def get_field_value(self, field: FieldInfo, field_name: str) -> Tuple[Any, str, bool]:
        return self.values.get(field_name), field_name, False

    def __call__(self) -> Dict[str, Any]:
        return dict(self.values)


class RunConfig(BaseSettings):
    """Every tunable of ingestion, training, imputation and experiments."""
    # windowing / ingestion
    window_length: int = Field(24, ge=2)
    stride: Optional[int] = Field(None, ge=1)
    bin_seconds: int = Field(60, ge=1)
    scaling_mode: ScalingMode = "minmax"
    label_mode: LabelMode = "movement4"

    # padding / model
    k: int = Field(5, ge=1)
    padding_strategy: PaddingStrategy = "knn"
    hidden_size: int = Field(32, ge=1)
    corruption_p: float = Field(0.8, gt=0.0, le=1.0)
    loss: LossMode = "bce"
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    clip_norm: float = Field(5.0, gt=0.0)

    # experiment
    levels: Annotated[List[float], NoDecode] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    seeds: Annotated[List[int], NoDecode] = list(range(10))
    methods: Annotated[List[str], NoDecode] = [
        "mean", "knn", "interp", "locf", "indicator", "dynimp-zero", "dynimp-mean", "dynimp-interp", "dynimp-knn",
    ]
    train_fraction: float = Field(0.8, gt=0.0, lt=1.0)
    classifier_c: float = Field(1.0, gt=0.0)
    classifier_max_iter: int = Field(500, ge=1)
    jobs: int = Field(1, ge=1)

    # synthetic generator
    users: int = Field(4, ge=1)
    minutes: int = Field(1440, ge=1)
    features: int = Field(6, ge=2)
    coupling: float = Field(0.9, ge=0.0, le=1.0)
    inherent_missing: float = Field(0.0, ge=0.0, lt=1.0)

    # gradient check
    grad_check_epsilon: float = Field(1e-5, gt=0.0)
    grad_check_tolerance: float = Field(1e-4, gt=0.0)
    grad_check_samples: int = Field(10, ge=1)

    seed: int = 0
    log_level: str = "INFO"
    log_file: Optional[str] = None

    model_config = SettingsConfigDict(
        env_prefix=ENV_PREFIX,
        extra="forbid",
        validate_default=True,
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # init kwargs carry the CLI overrides
        return init_settings, env_settings, ConfigFileSettingsSource(settings_cls, _config_file.get())

    @field_validator("levels", "seeds", "methods", mode="before")
    @classmethod
    def split_lists(cls, v: Any) -> Any:
        return _split_csv(v)

    @field_validator("levels")
    @classmethod
    def check_levels(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one missingness level is required")
        for level in v:
            if not 0.0 <= level < 1.0:
                raise ValueError(f"missingness level {level} outside [0, 1)")
        return v

    @field_validator("seeds")
    @classmethod
    def check_seeds(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("at least one seed is required")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        return v

    @field_validator("methods")
    @classmethod
    def check_methods(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("at least one method is required")
        unknown = [m for m in v if m not in KNOWN_METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {', '.join(KNOWN_METHODS)}")
        return v

    @model_validator(mode="after")
    def check_cross_fields(self) -> "RunConfig":
        if self.loss == "bce" and self.scaling_mode != "minmax":
            raise ValueError("loss=bce needs scaling_mode=minmax (cross-entropy is defined on [0, 1])")
        return self

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride is not None else self.window_length


def _normalise_keys(values: Dict[str, Optional[str]], origin: str) -> Dict[str, str]:
    known = set(RunConfig.model_fields)
    result: Dict[str, str] = {}
    for key, value in values.items():
        name = key.strip().lower()
        if name not in known:
            raise ConfigError(f"unknown config key '{key}' in {origin}")
        if value is not None:
            result[name] = value
    return result


def read_config_file(path: Path) -> Dict[str, str]:
    """Reads a flat key=value config file."""
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return _normalise_keys(dotenv_values(path), str(path))


def _check_environment() -> None:
    known = {f"{ENV_PREFIX}{name}".upper() for name in RunConfig.model_fields}
    for key in os.environ:
        if key.upper().startswith(ENV_PREFIX) and key.upper() not in known:
            raise ConfigError(f"unknown environment override '{key}'")


def load_config(config_path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Resolves defaults < config file < DYNIMP_ environment < CLI overrides."""
    overrides = overrides or {}
    unknown = [k for k in overrides if k not in RunConfig.model_fields]
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    _check_environment()
    token = _config_file.set(config_path)
    try:
        config = RunConfig(**overrides)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    finally:
        _config_file.reset(token)
    logger.debug(f"Resolved config: {config.model_dump()}")
    return config
