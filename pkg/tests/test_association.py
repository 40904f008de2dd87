import itertools

import numpy as np
import pytest

from sataris.association import (AssociationIterate, association_sca_step, build_c_matrices,
                                 chi_vector, gamma_rows, log2_ub, optimize_association,
                                 penalised_objective, penalty_ub, quadratic_lb, round_and_repair,
                                 true_slacks)
from sataris.channel import ChannelModel
from sataris.rates import DecisionState, effective_rows, received_powers
from sataris.scenario import desk_config, sample_topology
from sataris.transmit import LinkContext, initialize_beamformers

from conftest import crandn


def _state(cfg, topo, ch, chi=None):
    chi = np.eye(cfg.J, cfg.K) if chi is None else chi
    theta = np.zeros((cfg.J, cfg.N))
    rows = effective_rows(ch, theta, chi, topo.user_group)
    w = initialize_beamformers(LinkContext(rows, topo.user_group, topo.user_is_eve, topo.noise,
                                           cfg.upsilon, cfg.P_T, cfg.K))
    return DecisionState(w, theta, chi, topo.aris_initial)


def _gam(ch, topo, state):
    rows = gamma_rows(ch, state.theta)
    return np.einsum("ujl,kl->ukj", rows, state.w) / np.sqrt(topo.noise)[:, None, None]


def test_c_matrices_match_received_powers(desk_instance):
    cfg, topo, _, ch = desk_instance
    state = _state(cfg, topo, ch)
    C = build_c_matrices(ch, state.theta, state.w)
    assert np.allclose(C, np.conj(np.swapaxes(C, -1, -2)))
    for chi in (np.zeros((cfg.J, cfg.K)), state.chi):
        P = received_powers(effective_rows(ch, state.theta, chi, topo.user_group), state.w)
        for u in range(len(P)):
            x = chi_vector(chi, topo.user_group[u])
            got = np.real(np.einsum("i,kij,j->k", x, C[u], x))
            assert np.allclose(got, P[u], rtol=1e-12)
    # direct-only selector picks the (0, 0) entry
    P0 = received_powers(ch.h.conj(), state.w)
    assert np.allclose(C[:, :, 0, 0].real, P0, rtol=1e-12)


def test_surrogate_brackets_and_tightness():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, 1000)
    x0 = rng.uniform(0, 1, 1000)
    assert np.all(penalty_ub(x, x0) >= x - x ** 2 - 1e-15)
    assert np.allclose(penalty_ub(x0, x0), x0 - x0 ** 2, atol=1e-12)
    s = rng.uniform(0.1, 100, 1000)
    s0 = rng.uniform(0.1, 100, 1000)
    assert np.all(log2_ub(s, s0) >= np.log2(s) - 1e-12)
    assert np.allclose(log2_ub(s0, s0), np.log2(s0), atol=1e-12)
    for _ in range(1000):
        A = crandn(rng, 3, 3)
        C = A @ A.conj().T
        v, v0 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        assert quadratic_lb(v, v0, C) <= np.real(v @ C @ v) + 1e-10
        assert quadratic_lb(v0, v0, C) == pytest.approx(np.real(v0 @ C @ v0), abs=1e-12)


def test_large_penalty_keeps_binary_point(desk_instance):
    cfg, topo, _, ch = desk_instance
    state = _state(cfg, topo, ch)
    gam = _gam(ch, topo, state)
    ug, eve = topo.user_group, topo.user_is_eve
    total, interf = true_slacks(gam, state.chi, ug)
    obj, om, _ = penalised_objective(gam, state.chi, ug, eve, cfg.K, 1e3)
    it = AssociationIterate(state.chi, total, interf, om, 1e3, obj)
    nxt, sol = association_sca_step(it, gam, ug, eve, cfg.upsilon[ug], 1e3)
    assert sol.ok
    assert np.max(np.abs(nxt.chi - state.chi)) <= 1e-6


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_relaxed_trajectory_and_constraints(seed):
    cfg = desk_config(association_start="uniform")
    topo = sample_topology(cfg, seed)
    model = ChannelModel(cfg, topo, seed)
    ch = model.build(topo.aris_initial)
    state = _state(cfg, topo, ch)
    res = optimize_association(state, model, ch, cfg.penalty, relocate=False)
    traj = np.array(res.trajectory)
    # the surrogate is a tight minorant of the penalised objective
    assert np.all(np.diff(traj) >= -1e-5 * np.maximum(1.0, np.abs(traj[1:])))
    chi = res.chi_relaxed
    assert np.all(np.abs(chi.sum(axis=1) - 1) <= 1e-7)
    assert np.all(chi.sum(axis=0) <= 1 + 1e-7)
    assert np.all((chi >= 0) & (chi <= 1))
    assert np.allclose(res.chi.sum(axis=1), 1) and np.all(res.chi.sum(axis=0) <= 1)


def test_round_and_repair_cases():
    eye = np.eye(2, 3)
    assert np.array_equal(round_and_repair(eye), eye)
    assert np.array_equal(round_and_repair([[0.6, 0.4]]), [[1.0, 0.0]])
    # tie goes to the lower group, the second ARIS takes the next free group
    assert np.array_equal(round_and_repair([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]]),
                          [[1, 0, 0], [0, 1, 0]])


def test_round_and_repair_exhaustive_corners():
    # every 2x3 matrix with entries in {0, 0.5, 1}: result is a one-to-one binary map
    for vals in itertools.product([0.0, 0.5, 1.0], repeat=6):
        chi = np.array(vals).reshape(2, 3)
        out = round_and_repair(chi)
        assert set(np.unique(out)) <= {0.0, 1.0}
        assert np.all(out.sum(axis=1) == 1) and np.all(out.sum(axis=0) <= 1)
        j0 = int(np.argmax(chi[0]))
        assert out[0, j0] == 1.0


def test_relaxed_solution_nearly_binary():
    hits = 0
    seeds = range(10)
    for seed in seeds:
        cfg = desk_config()
        topo = sample_topology(cfg, seed)
        model = ChannelModel(cfg, topo, seed)
        ch = model.build(topo.aris_initial)
        res = optimize_association(_state(cfg, topo, ch), model, ch, cfg.penalty)
        hits += np.max(res.chi_relaxed * (1 - res.chi_relaxed)) < 1e-2
    assert hits >= 0.9 * len(seeds)
