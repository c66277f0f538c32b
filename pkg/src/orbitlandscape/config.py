"""Experiment configuration files.

A configuration is a JSON object; unknown keys are rejected so that typos fail
loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator


class ConfigError(ValueError):
    """Raised for unreadable or schema-violating configuration files."""


class Outputs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    csv: bool = True
    json_report: bool = Field(True, alias="json")
    plots: bool = True
    gnuplot: bool = False


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    group: Optional[str] = None
    theta_star: Optional[list[float]] = None
    sigma: Optional[float] = Field(None, gt=0)
    n: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    methods: Optional[list[Literal["em", "gd", "agd"]]] = None
    iters: Optional[int] = Field(None, ge=1)
    threads: Optional[int] = Field(None, ge=1)
    sigmas: Optional[list[float]] = None
    starts: Optional[int] = Field(None, ge=1)
    outputs: Outputs = Field(default_factory=Outputs)

    @field_validator("sigmas")
    @classmethod
    def _positive(cls, v: Optional[list[float]]) -> Optional[list[float]]:
        if v is not None and any(s <= 0 for s in v):
            raise ValueError("noise levels must be positive")
        return v


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def resolved(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(by_alias=True, exclude_none=True)
