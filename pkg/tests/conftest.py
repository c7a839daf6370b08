"""Shared fixtures."""

from pathlib import Path

import numpy as np
import pytest

from automr.core.models import NUM_OUTCOMES, Strategy
from automr.services.policy_net import PolicyDims, PolicyParameters, init_params, zero_params
from automr.services.reasoning_backend import MockBackend, ScriptedBackend, ScriptedEnvSpec
from automr.services.strategy_catalog import StrategyCatalog


@pytest.fixture
def catalog() -> StrategyCatalog:
    return StrategyCatalog()


@pytest.fixture
def small_dims() -> PolicyDims:
    return PolicyDims(d_c=16, d_s=8, h=32)


@pytest.fixture
def params(small_dims):
    return init_params(small_dims, seed=3)


@pytest.fixture
def forced_params(small_dims):
    """Build parameters under which one strategy has probability 1 in float64."""

    def make(strategy: Strategy, margin: float = 1e3) -> PolicyParameters:
        b2 = np.zeros(NUM_OUTCOMES)
        b2[strategy.ordinal] = margin
        return PolicyParameters(**{**zero_params(small_dims).blocks(), "b2": b2})

    return make


@pytest.fixture
def mock_backend(small_dims) -> MockBackend:
    return MockBackend(d_c=small_dims.d_c, seed=0, step_words=8)


@pytest.fixture
def scripted_spec() -> ScriptedEnvSpec:
    return ScriptedEnvSpec()


@pytest.fixture
def scripted_backend(scripted_spec, catalog, small_dims) -> ScriptedBackend:
    return ScriptedBackend(scripted_spec, catalog=catalog, d_c=small_dims.d_c)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def config_file(tmp_path: Path):
    """Write a flat config file and return its path."""

    def write(text: str) -> Path:
        path = tmp_path / "run.cfg"
        path.write_text(text, encoding="utf-8")
        return path

    return write
