from __future__ import annotations

import random

import pytest

from ccity import datagen, road_network
from ccity.scenario import ScenarioConfig, VehicleSpec


@pytest.fixture(scope="session")
def grid() -> road_network.RoadNetwork:
    return road_network.default_grid()


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory) -> tuple:
    """A small shared toy dataset: (directory, manifest)."""
    out = tmp_path_factory.mktemp("toy_ds")
    params = datagen.DatasetParams(
        n_cars=8, causal_fraction=0.5, mode="toy", counts=(8, 2, 4), seed=ANALYSIS_SEED
    )
    manifest = datagen.generate_dataset(params, out)
    return out, manifest


@pytest.fixture(scope="session")
def agency_dataset(tmp_path_factory) -> tuple:
    """A small shared agency dataset: (directory, manifest)."""
    out = tmp_path_factory.mktemp("agency_ds")
    params = datagen.DatasetParams(
        n_cars=8, causal_fraction=0.5, mode="agency", counts=(8, 2, 4), seed=ANALYSIS_SEED
    )
    manifest = datagen.generate_dataset(params, out)
    return out, manifest


ANALYSIS_SEED = 1302


def make_config(**overrides) -> ScenarioConfig:
    """A minimal valid toy config; fields replaceable per test."""
    base = dict(
        scenario_id="t-basic",
        mode="toy",
        vehicles=(VehicleSpec(id="a", spawn_spline="h0e0", spawn_offset=30.0),
                  VehicleSpec(id="b", spawn_spline="h0e0", spawn_offset=0.0)),
        causal_edges=(("a", "b"),),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def rng(seed: int = 0) -> random.Random:
    return random.Random(seed)
