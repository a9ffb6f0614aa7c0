"""Run configuration: one flat JSON object.

Keys are the field names of ``ModelConfig`` and ``ScheduleConfig`` plus a
few harness options (``val_fraction``, ``augment``, ``dice_smooth``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .model import ModelConfig
from .optim import ScheduleConfig


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    val_fraction: float = 0.2
    augment: bool = False
    dice_smooth: float = 1.0

    def __post_init__(self):
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.dice_smooth <= 0:
            raise ConfigError(f"dice_smooth must be > 0, got {self.dice_smooth}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        model_keys = {f.name for f in fields(ModelConfig)}
        sched_keys = {f.name for f in fields(ScheduleConfig)}
        extra_keys = {"val_fraction", "augment", "dice_smooth"}
        unknown = set(d) - model_keys - sched_keys - extra_keys
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            model = ModelConfig(**{k: v for k, v in d.items() if k in model_keys})
            schedule = ScheduleConfig(**{k: v for k, v in d.items() if k in sched_keys})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(model, schedule, **{k: v for k, v in d.items() if k in extra_keys})

    def to_dict(self) -> dict:
        out = self.model.to_dict()
        out.update(asdict(self.schedule))
        out.update(val_fraction=self.val_fraction, augment=self.augment, dice_smooth=self.dice_smooth)
        return out


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return RunConfig.from_dict(data)
