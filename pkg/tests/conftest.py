import math

import pytest

from ehsched.model import (
    ChannelModel,
    EnergyGrid,
    HarvestModel,
    ModelBundle,
    PowerRateSet,
    ShannonRate,
)

# 2-state burst arrival chain: q00=0.9, q01=0.1, q10=0.5, q11=0.5
BURST_STATES = (0.0, 256.0)
BURST_Q = ((0.9, 0.1), (0.5, 0.5))

# 802.11n-motivated discrete transmit powers (mW), 1 s slots
PAPER_LEVELS_MW = (5.0, 10.0, 23.0, 26.0, 74.0, 100.0, 159.0, 256.0)


@pytest.fixture
def burst_model() -> HarvestModel:
    return HarvestModel(BURST_STATES, BURST_Q, slot_s=1.0)


@pytest.fixture
def static_channel() -> ChannelModel:
    return ChannelModel.static()


@pytest.fixture
def paper_pset() -> PowerRateSet:
    return PowerRateSet(PAPER_LEVELS_MW, ShannonRate(slot_s=1.0), slot_s=1.0)


@pytest.fixture
def default_grid() -> EnergyGrid:
    return EnergyGrid(quantum=1.0, max_energy=4096.0)


@pytest.fixture
def burst_bundle(burst_model, static_channel, paper_pset, default_grid) -> ModelBundle:
    return ModelBundle(burst_model, static_channel, paper_pset, default_grid)


def toy_rate(received_mw: float) -> float:
    """log2(1 + p): strictly concave, g(0)=0; handy for hand-checkable cases."""
    return math.log2(1.0 + received_mw)
