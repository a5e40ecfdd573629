"""
Run configuration (YAML file validated by pydantic)

Example:
    corpus_root: data/multiwoz22
    split: test
    seed: 0
    registry:
      trackers:
        restaurant: {name: dst-restaurant, kind: template, domain: restaurant}
        ...
"""

import logging
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from dst import DEFAULT_FUZZY_THRESHOLD
from errors import ConfigError
from orchestrator import Registry, template_registry

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    corpus_root: Path
    db_dir: Optional[Path] = None
    split: Literal["train", "dev", "test", "validation"] = "test"
    seed: int = 0
    fuzzy_threshold: float = Field(DEFAULT_FUZZY_THRESHOLD, ge=0.0, le=1.0)
    concurrency: int = Field(4, ge=1)
    output_dir: Path = Path("output")
    predictions_file: str = "predictions.json"
    audit_log: Optional[Path] = None
    registry: Registry = Field(default_factory=template_registry)

    @model_validator(mode="after")
    def _default_db_dir(self) -> "RunConfig":
        if self.db_dir is None:
            self.db_dir = self.corpus_root / "db"
        return self

    @property
    def predictions_path(self) -> Path:
        return self.output_dir / self.predictions_file


def load_config(path) -> RunConfig:
    """
    Read and validate a YAML run configuration.

    Relative paths in the file are kept relative to the working directory.

    Raises:
        ConfigError: unreadable file, invalid YAML or failed validation
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")
    logger.info(f"Loaded config {path} (split={config.split}, seed={config.seed})")
    return config


def registry_to_yaml(registry: Registry) -> str:
    data = registry.model_dump(exclude_none=True, exclude_defaults=False)
    return yaml.safe_dump({"registry": data}, sort_keys=True)


def save_registry(registry: Registry, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(registry_to_yaml(registry))
    logger.info(f"Saved registry to {path}")
    return path
