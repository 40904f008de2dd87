import numpy as np
import pytest

from sataris.channel import ChannelModel
from sataris.scenario import desk_config, sample_topology


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def desk():
    return desk_config()


@pytest.fixture
def desk_instance():
    """(cfg, topo, model, channels) for desk seed 0 at the initial ARIS placement."""
    cfg = desk_config()
    topo = sample_topology(cfg, 0)
    model = ChannelModel(cfg, topo, 0)
    return cfg, topo, model, model.build(topo.aris_initial)


DEFAULT_SEEDS = range(20)


@pytest.fixture(scope="session")
def default_runs():
    """BCD results of every scheme on 20 desk seeds at the default point (shared, computed once)."""
    from sataris.bcd import SCHEMES, run_bcd
    cfg = desk_config()
    return {scheme: [run_bcd(cfg, seed, scheme) for seed in DEFAULT_SEEDS] for scheme in SCHEMES}
