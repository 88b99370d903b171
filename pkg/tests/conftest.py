from pathlib import Path

import numpy as np
import pytest

from cross_layer_allocator.mac.profile import UserProfile
from cross_layer_allocator.phy.channel import (
    BandPlan,
    ChannelRealization,
    LinkBudget,
    band_group_plan,
)

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def plan() -> BandPlan:
    return band_group_plan(1)


@pytest.fixture
def budget() -> LinkBudget:
    return LinkBudget()


@pytest.fixture
def three_users() -> list:
    """One 320 Mbps HQoS user and two 53.3 Mbps SQoS users."""
    return [
        UserProfile.from_request(0, "HQoS", 320.0, delay_ms=5.0),
        UserProfile.from_request(1, "SQoS", 53.3, delay_ms=100.0),
        UserProfile.from_request(2, "SQoS", 53.3, delay_ms=100.0),
    ]


@pytest.fixture
def sqos_users() -> list:
    return [UserProfile.from_request(k, "SQoS", 53.3) for k in range(3)]


@pytest.fixture
def flat_channel() -> ChannelRealization:
    """Single tap at zero delay without shadowing."""
    return ChannelRealization(
        shadowing_gain=1.0,
        cluster_index=np.array([0]),
        ray_index=np.array([0]),
        delays_ns=np.array([0.0]),
        gains=np.array([1.0]),
        seed=0,
    )


@pytest.fixture
def scenario1_path() -> Path:
    return SCENARIO_DIR / "scenario1.toml"


@pytest.fixture
def make_quality(rng):
    """Random effective SINR per unit power, sized for a unit power budget."""

    def make(K: int = 3, B: int = 3) -> np.ndarray:
        return rng.uniform(1.0, 50.0, size=(K, B))

    return make
