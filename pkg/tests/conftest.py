"""Shared helpers: compact configurations for fast tests."""

import dataclasses

import pytest

from med_dispatch.config import from_dict, to_dict
from med_dispatch.env import EnvConfig


def make_env_config(**overrides) -> EnvConfig:
    """EnvConfig with dotted-path overrides, e.g. traffic__main_rate=0.0."""
    data = to_dict(EnvConfig())
    for key, value in overrides.items():
        parts = key.split("__")
        node = data
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return from_dict(EnvConfig, data)


@pytest.fixture
def empty_env_config():
    """No traffic at all: zero arrival rates and no initial seeding."""
    return make_env_config(traffic__main_rate=0.0, traffic__ramp_rate=0.0,
                           initial_vehicles=0, horizon=50)


@pytest.fixture
def small_env_config():
    """Small but live corridor for fast integration tests."""
    return make_env_config(horizon=60, initial_vehicles=8, max_meds=3,
                           max_evs=10)
