"""JSON run and sweep configurations. Unknown keys are rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import Field, model_validator

from .configbase import StrictModel
from .encoder import EncoderConfig
from .errors import ConfigError
from .evaluation import ProbeConfig
from .hetgraph import SyntheticConfig
from .objective import TrainConfig

CONFIG_VERSION = 1
HIDDEN_DIMS = (64, 128, 256, 512, 1024)


class DataSource(StrictModel):
    path: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("exactly one of data.path and data.synthetic must be set")
        return self


class EvalConfig(StrictModel):
    probe: ProbeConfig = ProbeConfig()
    probe_seeds: int = Field(10, ge=1)
    linkage: Literal["average", "complete", "single", "ward"] = "average"
    normalize: bool = True  # cluster L2-normalized rows (cosine geometry)


class RunConfig(StrictModel):
    version: Literal[1] = 1
    data: DataSource
    metapaths: Optional[list[str]] = None
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)


class SweepSpec(StrictModel):
    version: Literal[1] = 1
    parameter: Literal["rho", "sigma", "hidden_dim"]
    values: list[float] = Field(min_length=1)
    base: RunConfig

    @model_validator(mode="after")
    def _domain(self):
        for v in self.values:
            if self.parameter == "sigma" and not 0.0 <= v <= 1.0:
                raise ValueError(f"sigma value {v} outside [0, 1]")
            if self.parameter == "rho" and v < 0:
                raise ValueError(f"rho value {v} is negative")
            if self.parameter == "hidden_dim" and v not in HIDDEN_DIMS:
                raise ValueError(f"hidden_dim value {v} not in {HIDDEN_DIMS}")
        return self

    def run_config(self, value: float) -> RunConfig:
        base = self.base.model_dump()
        if self.parameter == "hidden_dim":
            base["encoder"]["d"] = int(value)
        else:
            base["train"]["loss"][self.parameter] = float(value)
        return RunConfig.from_dict(base)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def load_run_config(path) -> RunConfig:
    return RunConfig.from_dict(_read_json(path))


def load_sweep_spec(path) -> SweepSpec:
    return SweepSpec.from_dict(_read_json(path))


def load_synthetic_config(path) -> SyntheticConfig:
    data = _read_json(path)
    data.pop("version", None)
    return SyntheticConfig.from_dict(data)
