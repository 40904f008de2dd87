import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sataris.scenario import (ConfigError, ScenarioConfig, aris_user_distance, desk_config,
                              dump_scenario, group_centers, load_scenario, off_axis_angle,
                              sample_disc, sample_topology, rng_stream)


def test_empty_config_gives_defaults():
    cfg = load_scenario("")
    assert (cfg.K, cfg.J, cfg.L, cfg.N) == (5, 3, 5, 25)
    assert cfg.P_T == 100.0 and cfg.bandwidth == 2e8 and cfg.noise_temp == 290.0
    assert cfg.sat_altitude == 220e3 and cfg.penalty == 10.0
    assert cfg.g_max == pytest.approx(1e5)


def test_j_exceeding_k_rejected():
    with pytest.raises(ConfigError, match="J exceeds K") as err:
        load_scenario("J = 6\nK = 5")
    assert err.value.field == "J"


def test_db_keys_converted():
    cfg = load_scenario("penalty = 10\npath_loss_exponent = 2.3\nrician_factor_db = 3")
    assert cfg.rician_factor == pytest.approx(1.995, abs=1e-3)
    assert cfg.path_loss_exponent == 2.3 and cfg.penalty == 10


@pytest.mark.parametrize("text, field", [
    ("bogus = 1", "bogus"),
    ("P_T = -1", "P_T"),
    ("phi_3db = 2", "phi_3db"),
    ("K = 2\nK = 3", "K"),
    ("wiretap_threshold = -1", "wiretap_threshold"),
])
def test_bad_configs_name_the_field(text, field):
    with pytest.raises(ConfigError) as err:
        load_scenario(text)
    assert err.value.field == field


def test_malformed_line():
    with pytest.raises(ConfigError):
        load_scenario("K 5")


def test_dump_load_round_trip():
    cfg = desk_config(wiretap_threshold=(0.5, 1.0, 2.0), x_min=-5000.0)
    assert load_scenario(dump_scenario(cfg)) == cfg


def test_topology_deterministic():
    cfg = desk_config()
    a, b = sample_topology(cfg, 7), sample_topology(cfg, 7)
    assert np.array_equal(a.user_xy, b.user_xy)
    assert np.array_equal(a.aris_initial, b.aris_initial)
    assert not np.array_equal(a.user_xy, sample_topology(cfg, 8).user_xy)


def test_topology_roles_and_discs():
    cfg = desk_config()
    for seed in range(20):
        topo = sample_topology(cfg, seed)
        for k in range(cfg.K):
            users = topo.group_users(k)
            assert topo.user_is_eve[users].sum() == cfg.E
            dist = np.linalg.norm(topo.user_xy[users] - topo.group_centers[k], axis=1)
            assert dist.max() <= cfg.group_radius
        x0, x1, y0, y1 = cfg.region
        assert np.all((topo.aris_initial[:, 0] >= x0) & (topo.aris_initial[:, 0] <= x1))
        assert np.all((topo.aris_initial[:, 1] >= y0) & (topo.aris_initial[:, 1] <= y1))


def test_disc_samples_within_radius():
    pts = sample_disc(rng_stream(1, "disc"), 10_000, 300.0)
    assert np.linalg.norm(pts, axis=1).max() <= 300.0


def test_disc_mean_radius():
    # uniform disc: E[r] = 2/3 R
    pts = sample_disc(rng_stream(2, "disc"), 100_000, 300.0)
    assert np.linalg.norm(pts, axis=1).mean() == pytest.approx(200.0, rel=0.01)


def test_distance_examples():
    assert aris_user_distance((0, 0), (3, 4), 0.0) == pytest.approx(5.0)
    assert aris_user_distance((10, -3), (10, -3), 100.0) == pytest.approx(100.0)


def test_distance_matches_3d_norm():
    rng = np.random.default_rng(0)
    q, w = rng.uniform(-1e3, 1e3, (2, 100, 2))
    H = rng.uniform(0, 500, 100)
    ref = np.array([np.linalg.norm(np.r_[q[i], H[i]] - np.r_[w[i], 0.0]) for i in range(100)])
    got = np.array([aris_user_distance(q[i], w[i], H[i]) for i in range(100)])
    assert np.allclose(got, ref, rtol=1e-12, atol=0)


coord = st.floats(-1e4, 1e4, allow_nan=False)


@given(coord, coord, coord, coord, st.one_of(st.just(0.0), st.floats(1e-3, 1e3)))
def test_distance_symmetric_and_above_altitude(x1, y1, x2, y2, H):
    d = aris_user_distance((x1, y1), (x2, y2), H)
    assert d == pytest.approx(aris_user_distance((x2, y2), (x1, y1), H), rel=1e-12)
    assert d >= H * (1 - 1e-12)


def test_off_axis_examples():
    sat = np.array([0.0, 0.0, 220e3])
    assert off_axis_angle(sat, (500.0, 200.0), (500.0, 200.0)) == pytest.approx(0.0, abs=1e-15)
    left = off_axis_angle(sat, (-300.0, 0.0), (0.0, 0.0))
    right = off_axis_angle(sat, (300.0, 0.0), (0.0, 0.0))
    assert left == pytest.approx(right, rel=1e-12) and left > 0


def test_off_axis_matches_arccos():
    # arccos loses precision near 0, so the oracle geometry keeps angles wide
    rng = np.random.default_rng(3)
    for _ in range(200):
        sat = np.r_[rng.uniform(-5e3, 5e3, 2), rng.uniform(1e3, 5e3)]
        a, b = rng.uniform(-5e3, 5e3, (2, 2))
        u, v = np.r_[a, 0] - sat, np.r_[b, 0] - sat
        ref = math.acos(np.clip(u @ v / np.linalg.norm(u) / np.linalg.norm(v), -1, 1))
        assert off_axis_angle(sat, a, b) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=50)
@given(coord, coord, coord, coord)
def test_off_axis_range(x1, y1, x2, y2):
    ang = off_axis_angle((0.0, 0.0, 220e3), (x1, y1), (x2, y2))
    assert 0.0 <= ang <= math.pi


def test_ring_layout_spacing():
    cfg = desk_config()
    c = group_centers(cfg)
    assert np.linalg.norm(c[0] - c[1]) == pytest.approx(cfg.group_spacing)


def test_wiretap_threshold_expanded():
    cfg = ScenarioConfig(K=4, J=2, wiretap_threshold=2.5)
    assert cfg.upsilon.tolist() == [2.5] * 4
    with pytest.raises(ConfigError):
        ScenarioConfig(K=4, J=2, wiretap_threshold=(1.0, 2.0))
