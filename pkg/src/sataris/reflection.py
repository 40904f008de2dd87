"""Passive beamforming block: per-ARIS SDR over V = v^H v with unit diagonal.

For a user of the group served by ARIS j, the amplitude received from beam l is
``v @ c_{u,l}`` with ``v = [1, e^{i theta_j}]`` and
``c_{u,l} = [conj(h_u) w_l ; conj(g_{j,u}) * (G_j w_l)]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic
from .mm import add_rate_constraints, closed_form_aux
from .rates import rates_from_powers


@dataclass
class ReflectAuxiliaries:
    mu: np.ndarray
    is_eve: np.ndarray


@dataclass
class ReflectResult:
    theta: np.ndarray
    objective: float
    relaxed_trace: list = field(default_factory=list)
    iterations: int = 0
    status: str = conic.OPTIMAL
    accepted: bool = True


def cascade_vectors(h, G_j, g_j, w) -> np.ndarray:
    """(U, K, N+1) vectors c_{u,l} for the given users' channels.

    h: (U, L), G_j: (N, L), g_j: (U, N), w: (K, L).
    """
    direct = h.conj() @ w.T                                    # (U, K)
    refl = g_j.conj()[:, None, :] * (w @ G_j.T)[None, :, :]   # (U, K, N)
    return np.concatenate([direct[:, :, None], refl], axis=2)


def build_lambda(h, G_j, g_j, w) -> np.ndarray:
    """(U, K, N+1, N+1) rank-one matrices with Tr(Lambda V) = |v c|^2 for V = v^H v."""
    c = cascade_vectors(h, G_j, g_j, w)
    return np.einsum("uki,ukj->ukij", c, c.conj())


def phases_to_v(theta) -> np.ndarray:
    return np.concatenate([[1.0 + 0j], np.exp(1j * np.asarray(theta, dtype=float))])


def lift_v(v) -> np.ndarray:
    v = np.asarray(v)
    return np.outer(v.conj(), v)


def lambda_powers(Lam, V) -> np.ndarray:
    """(U, K) values Re Tr(Lambda_{u,l} V)."""
    return np.real(np.einsum("ukij,ji->uk", Lam, V))


def update_mu_aux(V, Lam, noise, own, is_eve) -> ReflectAuxiliaries:
    return ReflectAuxiliaries(closed_form_aux(lambda_powers(Lam, V), own, is_eve, noise),
                              np.asarray(is_eve))


def solve_v_subproblem(aux: ReflectAuxiliaries, Lam, upsilon_bits, noise, own):
    """One SDR of the per-ARIS reflection subproblem.

    Returns (V, Omega_bits, ConicSolution); upsilon_bits is per user.
    """
    Lam = np.asarray(Lam)
    U, K, n, _ = Lam.shape
    noise = np.asarray(noise, dtype=float)
    scaled = Lam / noise[:, None, None, None]
    prob = conic.ConicProblem()
    V = prob.hermitian(n)
    for i in range(n):
        prob.eq(V.diag(i), 1.0)
    omega = prob.scalar()
    T = [[V.inner(scaled[u, l]) for l in range(K)] for u in range(U)]
    add_rate_constraints(prob, T, own, aux.is_eve, aux.mu * noise, [omega] * U, upsilon_bits)
    prob.maximize(omega)
    sol = conic.solve(prob)
    return V.value(sol.x), sol.value(omega), sol


def phases_from_v(v) -> np.ndarray:
    """theta_n = angle(v_{n+1} / v_1) wrapped to [0, 2 pi)."""
    v = np.asarray(v)
    return np.mod(np.angle(v[1:] / v[0]), 2 * np.pi)


def extract_phases(V, n_rand: int = 0, rng: np.random.Generator | None = None) -> list:
    """Candidate phase vectors from a (relaxed) V: the principal one first, then
    ``n_rand`` Gaussian draws shaped by V and projected to unit modulus."""
    V = (np.asarray(V) + np.asarray(V).conj().T) / 2
    lam, U = np.linalg.eigh(V)
    lam = np.clip(lam, 0, None)
    cands = [phases_from_v(U[:, -1].conj())]
    if n_rand:
        rng = rng if rng is not None else np.random.default_rng(0)
        n = len(lam)
        z = (rng.standard_normal((n_rand, n)) + 1j * rng.standard_normal((n_rand, n))) / np.sqrt(2)
        draws = (z * np.sqrt(lam)) @ U.T          # columns of U weighted, one draw per row
        cands.extend(phases_from_v(d.conj()) for d in draws)
    return cands


def group_score(c, theta, own, is_eve, noise, upsilon_bits) -> tuple[float, float]:
    """(min intended rate, worst wiretap excess) for one group given cascade vectors c."""
    amp = c[:, :, 0] + c[:, :, 1:] @ np.exp(1j * np.asarray(theta))
    _, r = rates_from_powers(np.abs(amp) ** 2, own, noise)
    legit = r[~is_eve].min()
    excess = float(np.max(r[is_eve] - upsilon_bits[is_eve], initial=-np.inf))
    return float(legit), excess


def optimize_aris(theta0, c, own, is_eve, noise, upsilon_bits, eps: float = 1e-3,
                  max_iters: int = 50, n_rand: int = 100,
                  rng: np.random.Generator | None = None) -> ReflectResult:
    """MM/SDR loop for one ARIS; stops when ||V - V_prev||_F / (N+1) <= eps.

    The recovered phases replace ``theta0`` only if they keep every wiretap cap
    and do not lower the group's minimum intended rate.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    Lam = np.einsum("uki,ukj->ukij", c, c.conj())
    n = c.shape[2]
    V = lift_v(phases_to_v(theta0))
    obj0, excess0 = group_score(c, theta0, own, is_eve, noise, upsilon_bits)
    trace, status, it = [], conic.OPTIMAL, 0
    for it in range(1, max_iters + 1):
        aux = update_mu_aux(V, Lam, noise, own, is_eve)
        V_new, omega, sol = solve_v_subproblem(aux, Lam, upsilon_bits, noise, own)
        if not sol.ok:
            status = sol.status
            break
        trace.append(float(omega))
        delta = np.linalg.norm(V_new - V) / n
        V = V_new
        if delta <= eps:
            break
    best, best_obj = None, -np.inf
    for theta in extract_phases(V, n_rand, rng):
        obj, excess = group_score(c, theta, own, is_eve, noise, upsilon_bits)
        if excess <= 1e-9 and obj > best_obj:
            best, best_obj = theta, obj
    if best is not None and (best_obj >= obj0 or excess0 > 1e-9):
        return ReflectResult(best, best_obj, trace, it, status, True)
    return ReflectResult(np.mod(np.asarray(theta0, dtype=float), 2 * np.pi), obj0, trace, it,
                         status, False)


def aligned_phases(c_user_beam) -> np.ndarray:
    """Phases that co-phase every reflected term with the direct term of one (user, beam) vector."""
    c = np.asarray(c_user_beam)
    ref = np.angle(c[0]) if abs(c[0]) > 0 else 0.0
    return np.mod(ref - np.angle(c[1:]), 2 * np.pi)


def reflection_loop(state, channels, topo, cfg, rng: np.random.Generator | None = None) -> list:
    """Optimise every associated ARIS in index order; returns a ReflectResult per ARIS
    (None for ARISs that serve no group) and updates ``state.theta`` in place."""
    results = []
    for j in range(cfg.J):
        if state.chi[j].max() < 0.5:
            results.append(None)
            continue
        k = int(np.argmax(state.chi[j]))
        users = topo.group_users(k)
        c = cascade_vectors(channels.h[users], channels.G[j], channels.g[j, users], state.w)
        own = np.full(len(users), k)
        res = optimize_aris(state.theta[j], c, own, topo.user_is_eve[users], topo.noise[users],
                            cfg.upsilon[own], cfg.eps_r, cfg.max_ris_iters, cfg.n_rand_ris, rng)
        state.theta[j] = res.theta
        results.append(res)
    return results
