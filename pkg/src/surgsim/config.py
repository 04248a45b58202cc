"""Run configuration: one YAML file with a section per module, plus dotted overrides."""

from __future__ import annotations

import os
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from surgsim.bench import BenchProtocol
from surgsim.dynamics import DynamicsConfig
from surgsim.envs import EnvConfig
from surgsim.learn.ppo import TrainConfig
from surgsim.render import RenderConfig

OUTPUT_ROOT_ENV = "SURGSIM_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # bundled robot name or a path to a descriptor; copied into env.robot
    robot: str | None = None
    env: EnvConfig = Field(default_factory=EnvConfig)
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    bench: BenchProtocol = Field(default_factory=BenchProtocol)
    render: RenderConfig = Field(default_factory=RenderConfig)
    output_dir: str = "runs/default"
    seed: int | None = None
    workers: int | None = None

    @model_validator(mode="after")
    def _propagate(self):
        if self.robot is not None:
            self.env.robot = self.robot
        if self.seed is not None:
            self.env.seed = self.train.seed = self.bench.seed = self.seed
        # the learner's row count is the env row count; whichever was given wins
        env_set = "n_envs" in self.env.model_fields_set
        train_set = "n_robots" in self.train.model_fields_set
        if env_set and train_set and self.env.n_envs != self.train.n_robots:
            raise ValueError(f"env.n_envs ({self.env.n_envs}) and train.n_robots ({self.train.n_robots}) disagree")
        if env_set and not train_set:
            self.train = self.train.model_copy(update={"n_robots": self.env.n_envs})
            TrainConfig.model_validate(self.train.model_dump())
        else:
            self.env.n_envs = self.train.n_robots
        return self

    def output_path(self) -> Path:
        p = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return p if p.is_absolute() or not root else Path(root) / p

    def dump(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def _parse_value(text: str):
    return yaml.safe_load(text) if text != "" else ""


def apply_override(data: dict, item: str) -> None:
    """Set ``a.b.c=value`` in a nested dict; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r}: expected key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"override {item!r}: empty key segment")
    node = data
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {item!r}: {p} is not a section")
        node = nxt
    node[parts[-1]] = _parse_value(value)


def _format_errors(err: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for e in err.errors():
        path = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"  {path}: {e['msg']}")
    return "\n".join(lines)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    data: dict = {}
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: YAML error: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides or []:
        apply_override(data, item)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e, source)) from None
