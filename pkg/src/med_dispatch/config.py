"""Run configuration: one JSON document covering environment and training.

Unknown keys are rejected; loading materializes every default so the echoed
config fully reproduces a run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .env import EnvConfig
from .ppo import PpoHyper


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoHyper = field(default_factory=PpoHyper)
    out_dir: str = "runs/latest"
    seed: int = 0
    workers: int = 1
    episodes: int = 10

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")


def _default_value(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def _coerce(default, value, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected number")
        return float(value)
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected integer")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected list")
        return tuple(value)
    return value


def from_dict(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key == "_doc":
            continue
        if key not in fields:
            raise ConfigError(f"unknown config key: {path + key}")
        default = _default_value(fields[key])
        if dataclasses.is_dataclass(default):
            kwargs[key] = from_dict(type(default), value, path + key + ".")
        else:
            kwargs[key] = _coerce(default, value, path + key)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def load(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return from_dict(RunConfig, data)


def _find_paths(data: dict, leaf: str, prefix=()) -> list:
    hits = []
    for key, value in data.items():
        if key == leaf:
            hits.append(prefix + (key,))
        if isinstance(value, dict):
            hits.extend(_find_paths(value, leaf, prefix + (key,)))
    return hits


def apply_overrides(cfg: RunConfig, overrides: list) -> RunConfig:
    """Apply repeatable key=value overrides.

    Keys are dotted paths from the root; a bare key is accepted when it names
    exactly one field anywhere in the schema.
    """
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = tuple(key.split("."))
        if len(parts) == 1 and parts[0] not in data:
            hits = _find_paths(data, parts[0])
            if not hits:
                raise ConfigError(f"unknown override key: {key}")
            if len(hits) > 1:
                dotted = ", ".join(".".join(h) for h in hits)
                raise ConfigError(f"ambiguous override {key}: matches {dotted}")
            parts = hits[0]
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown override key: {key}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown override key: {key}")
        node[parts[-1]] = value
    return from_dict(RunConfig, data)


FIELD_DOCS = {
    "env": "environment: road, traffic, physics, protocol and reward settings",
    "env.network": "corridor geometry; lengths/positions in road units",
    "env.network.ramp_positions": "on-ramp positions along the corridor",
    "env.idm": "car-following parameters (speeds m/s, accelerations m/s^2)",
    "env.mobil": "lane-change incentive and safety parameters",
    "env.traffic": "arrival rates, vehicle mix, spawn bands, EV battery size",
    "env.ev_body": "EV tractive-power body parameters",
    "env.med_body": "MED body parameters (not battery-modelled)",
    "env.ambient": "air density, gravity, road slope",
    "env.med_coil": "transmitter coil geometry",
    "env.ev_coil": "receiver coil geometry",
    "env.circuit": "resonant link electrical parameters",
    "env.quadrature": "node count for the inductance integral",
    "env.protocol": "booking thresholds, slot geometry, charge power",
    "env.reward": "reward weights and depletion penalty",
    "env.max_meds": "MED pool size (observation has one block per pool slot)",
    "env.max_evs": "EV blocks in the observation vector",
    "env.cooldown": "steps between accepted dispatches",
    "ppo": "PPO hyperparameters",
    "ppo.total_steps": "environment steps of training",
    "out_dir": "artifact directory for train/eval outputs",
    "workers": "parallel rollout environments (1 = fully deterministic)",
}


def dump_default_config() -> str:
    """Fully-defaulted schema as JSON; '_doc' carries field documentation
    and is ignored on load."""
    data = to_dict(RunConfig())
    data["_doc"] = FIELD_DOCS
    return json.dumps(data, indent=2)
