import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from scenplan.building import (
    BuildingConfig,
    build_stylized_building,
    default_building_config,
    default_config_path,
)


@pytest.fixture(scope="session")
def default_config() -> BuildingConfig:
    return default_building_config()


@pytest.fixture(scope="session")
def default_config_dict() -> dict:
    with open(default_config_path(), "r", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def default_model(default_config):
    return build_stylized_building(default_config)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
