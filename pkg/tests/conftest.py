"""Shared fixtures: a tiny-profile model and one generated dataset per session."""

import pytest

from facelab.data.appearance import AppearanceConfig
from facelab.data.generate import generate_dataset
from facelab.data.loader import SyntheticDataset
from facelab.face.model import build_synthetic_model
from facelab.training.settings import TrainConfig


@pytest.fixture(scope="session")
def tiny_config() -> TrainConfig:
    return TrainConfig.from_profile("tiny")


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return build_synthetic_model(tiny_config.model_spec(), tiny_config.model_seed)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, tiny_config, tiny_model):
    out = tmp_path_factory.mktemp("tiny_dataset")
    generate_dataset(
        tiny_model,
        tiny_config.dataset_size,
        AppearanceConfig(),
        tiny_config.seed,
        out,
        size=tiny_config.size,
        val=tiny_config.split_val,
        test=tiny_config.split_test,
    )
    return out


@pytest.fixture
def tiny_dataset(tiny_dataset_dir) -> SyntheticDataset:
    return SyntheticDataset(tiny_dataset_dir)
