"""Shared fixtures: tiny datasets and model shapes sized for CPU tests."""

from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import settings

from dualssl.data.datasets import ImageDataset
from dualssl.models import (
    ConvStreamConfig,
    DualStreamModel,
    FusionPoint,
    TransformerStreamConfig,
    default_fusion_points,
)

settings.register_profile("ci", deadline=None, derandomize=True, max_examples=60)
settings.load_profile("ci")


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="also run the hour-scale experiment reproductions",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        # neutralize the default '-m not slow' deselection
        config.option.markexpr = ""


TINY_T = TransformerStreamConfig(
    patch_size=8, embed_dim=32, depth=2, heads=2, mlp_ratio=2.0, num_classes=10
)
TINY_C = ConvStreamConfig(
    stage_channels=(16, 32), stage_depths=(1, 1), downsample_factors=(2, 2), num_classes=10
)


def tiny_dual(fusion: bool = True, **kwargs) -> DualStreamModel:
    points = default_fusion_points(TINY_T, TINY_C) if fusion else []
    return DualStreamModel(TINY_T, TINY_C, points, **kwargs)


@pytest.fixture(scope="session")
def synth_train() -> ImageDataset:
    from dualssl.data.datasets import load_dataset

    return load_dataset("synth10", train=True)


@pytest.fixture(scope="session")
def synth_test() -> ImageDataset:
    from dualssl.data.datasets import load_dataset

    return load_dataset("synth10", train=False)


@pytest.fixture(scope="session")
def synth_small(synth_train) -> ImageDataset:
    """1000-image class-balanced subset used by trainer-level tests."""
    rng = np.random.default_rng(7)
    picks = []
    for cls in range(synth_train.num_classes):
        pool = np.flatnonzero(synth_train.labels == cls)
        picks.append(rng.choice(pool, size=100, replace=False))
    idx = np.sort(np.concatenate(picks))
    return synth_train.subset(idx)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(1234)
    np.random.seed(1234)
    yield
