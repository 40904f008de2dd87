"""ARIS-group association: relaxed binary variables with a concave penalty,
solved by successive convex approximation, then rounded to a feasible
one-to-one assignment.

For a user of group k the received amplitude from beam l is affine in the
group's association column: ``gamma_0 + sum_j chi_{j,k} gamma_j`` where
``gamma = Gamma_u w_l`` stacks the direct term and every ARIS's reflected term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import ChannelModel, ChannelSet
from .rates import reflected_rows
from .reflection import aligned_phases, cascade_vectors


# --- surrogates -------------------------------------------------------------

def penalty_ub(chi, chi0):
    """Tangent upper bound of chi - chi^2 at chi0."""
    return chi - 2 * chi0 * chi + chi0 ** 2


def quadratic_lb(chi, chi0, C):
    """Tangent lower bound of x C x^T at x0 for real row vectors x and Hermitian PSD C."""
    Cr = np.real(np.asarray(C))
    x, x0 = np.asarray(chi, float), np.asarray(chi0, float)
    return 2 * x0 @ Cr @ x - x0 @ Cr @ x0


def log2_ub(psi, psi0):
    """First-order Taylor upper bound of log2(psi) at psi0 (derivative 1/(psi0 ln 2))."""
    return np.log2(psi0) + (np.asarray(psi) - psi0) / (psi0 * math.log(2))


def fts_association(chi0, psi0):
    """Surrogate callables expanded at (chi0, psi0): penalty, quadratic-form and log bounds."""
    return dict(
        penalty=lambda chi: penalty_ub(chi, chi0),
        quadratic=lambda chi, C: quadratic_lb(chi, chi0, C),
        log2=lambda psi: log2_ub(psi, psi0),
    )


# --- C matrices -------------------------------------------------------------

def gamma_rows(channels: ChannelSet, theta) -> np.ndarray:
    """(U, J+1, L): direct row then every ARIS's reflected row for each user."""
    refl = reflected_rows(channels, theta)                      # (J, U, L)
    return np.concatenate([channels.h.conj()[:, None, :], refl.transpose(1, 0, 2)], axis=1)


def build_c_matrices(channels: ChannelSet, theta, w, rows=None) -> np.ndarray:
    """(U, K, J+1, J+1) matrices C_{u,l} = Gamma_u w_l w_l^H Gamma_u^H."""
    G = gamma_rows(channels, theta) if rows is None else rows
    gam = np.einsum("ujl,kl->ukj", G, w)
    return np.einsum("uki,ukj->ukij", gam, gam.conj())


def chi_vector(chi, k: int) -> np.ndarray:
    return np.concatenate([[1.0], np.asarray(chi, float)[:, k]])


# --- SCA step ---------------------------------------------------------------

@dataclass
class AssociationIterate:
    chi: np.ndarray                  # (J, K) relaxed
    psi_bar: np.ndarray              # (U,)
    psi_hat: np.ndarray              # (U,)
    Omega: np.ndarray                # (K,)
    penalty: float
    objective: float = -np.inf       # penalised objective


def amplitudes(gam, chi, user_group) -> np.ndarray:
    """(U, K) complex amplitudes for (normalised) gamma (U, K, J+1)."""
    X = np.concatenate([np.ones((1, chi.shape[1])), chi], axis=0)[:, user_group]   # (J+1, U)
    return np.einsum("ukj,ju->uk", gam, X)


def true_slacks(gam, chi, user_group):
    P = np.abs(amplitudes(gam, chi, user_group)) ** 2
    total = P.sum(axis=1) + 1
    interf = total - P[np.arange(len(P)), user_group]
    return total, interf


def penalised_objective(gam, chi, user_group, is_eve, K, tau) -> tuple[float, np.ndarray, float]:
    """(sum_k Omega_k - tau * sum chi(1-chi), Omega, max wiretap rate excess) at chi; rates in bits."""
    total, interf = true_slacks(gam, chi, user_group)
    r = np.log2(total / interf)
    omega = np.array([r[(user_group == k) & ~is_eve].min() for k in range(K)])
    return float(omega.sum() - tau * np.sum(chi - chi ** 2)), omega, r


def association_sca_step(it: AssociationIterate, gam, user_group, is_eve, upsilon_bits, tau: float):
    """One convex restriction solve around ``it``; returns (next iterate, ConicSolution).

    gam: (U, K, J+1) noise-normalised vectors Gamma_u w_l / sigma_u.
    upsilon_bits: per-user caps (ignored for intended users).
    """
    U, K, J1 = gam.shape
    J = J1 - 1
    chi0 = it.chi
    ln2 = math.log(2)
    prob = conic.ConicProblem()
    chi_v = [[prob.scalar() for _ in range(K)] for _ in range(J)]
    omega = prob.variable(K)
    for j in range(J):
        prob.eq(conic.affine_sum(chi_v[j]), 1.0)
        for k in range(K):
            prob.ge(chi_v[j][k], 0.0)
            prob.le(chi_v[j][k], 1.0)
    for k in range(K):
        prob.le(conic.affine_sum([chi_v[j][k] for j in range(J)]), 1.0)

    def amp(u, l):
        """(Re, Im) of the amplitude as Affine expressions in chi."""
        k = user_group[u]
        g = gam[u, l]
        re = conic.Affine(const=g[0].real) + conic.affine_sum([chi_v[j][k] * g[j + 1].real for j in range(J)])
        im = conic.Affine(const=g[0].imag) + conic.affine_sum([chi_v[j][k] * g[j + 1].imag for j in range(J)])
        return re, im

    def amp_lb(u, l):
        """Tangent lower bound of |amplitude|^2 around chi0."""
        k = user_group[u]
        g = gam[u, l]
        x0 = chi_vector(chi0, k)
        a0 = x0 @ g
        re, im = amp(u, l)
        return 2 * (a0.real * re + a0.imag * im) - abs(a0) ** 2

    total0, interf0 = true_slacks(gam, chi0, user_group)
    for u in range(U):
        k = user_group[u]
        others = [l for l in range(K) if l != k]
        if not is_eve[u]:
            psi_bar, psi_hat, t = prob.scalar(), prob.scalar(), prob.scalar()
            prob.le(psi_bar, conic.affine_sum([amp_lb(u, l) for l in range(K)]) + 1.0)
            parts = [e for l in others for e in amp(u, l)]
            prob.rsoc(psi_hat - 1.0, 1.0, parts)
            prob.log_ge(t, psi_bar)
            p0 = interf0[u]
            prob.ge(t - math.log(p0) - (psi_hat - p0) / p0, omega[k] * ln2)
        elif np.isfinite(upsilon_bits[u]):
            psi_bar, psi_hat, s = prob.scalar(), prob.scalar(), prob.scalar()
            parts = [e for l in range(K) for e in amp(u, l)]
            prob.rsoc(psi_bar - 1.0, 1.0, parts)
            prob.le(psi_hat, conic.affine_sum([amp_lb(u, l) for l in others]) + 1.0)
            prob.log_ge(s, psi_hat)
            p0 = total0[u]
            prob.le(math.log(p0) + (psi_bar - p0) / p0 - s, upsilon_bits[u] * ln2)
    pen = conic.affine_sum([penalty_ub(chi_v[j][k], chi0[j, k]) for j in range(J) for k in range(K)])
    prob.maximize(conic.affine_sum(omega) - tau * pen)
    sol = conic.solve(prob)
    if not sol.ok:
        return it, sol
    chi = np.clip(np.array([[sol.value(chi_v[j][k]) for k in range(K)] for j in range(J)]), 0.0, 1.0)
    total, interf = true_slacks(gam, chi, user_group)
    obj, om, _ = penalised_objective(gam, chi, user_group, is_eve, K, tau)
    return AssociationIterate(chi, total, interf, om, tau, obj), sol


# --- rounding ---------------------------------------------------------------

def round_and_repair(chi_relaxed) -> np.ndarray:
    """Binary one-to-one association: ARISs in index order take their best free group
    (ties to the lower group index)."""
    chi_relaxed = np.asarray(chi_relaxed, dtype=float)
    J, K = chi_relaxed.shape
    out = np.zeros((J, K))
    free = np.ones(K, dtype=bool)
    for j in range(J):
        scores = np.where(free, chi_relaxed[j], -np.inf)
        k = int(np.argmax(scores))
        out[j, k] = 1.0
        free[k] = False
    return out


def assignment_of(chi) -> np.ndarray:
    return np.argmax(np.asarray(chi), axis=1)


# --- association block --------------------------------------------------------

@dataclass
class AssociationResult:
    chi: np.ndarray
    chi_relaxed: np.ndarray
    changed: bool
    iterations: int
    trajectory: list = field(default_factory=list)      # penalised objectives
    penalties: list = field(default_factory=list)       # sum chi(1-chi)
    status: str = conic.OPTIMAL
    prospective: dict = field(default_factory=dict)     # (j, k) -> (q, theta)


def prospective_gamma(model: ChannelModel, channels: ChannelSet, state, relocate: bool,
                      region_clip) -> tuple[np.ndarray, dict]:
    """Gamma rows where every (ARIS, group) pair that is not currently associated is
    evaluated with the ARIS hovering over that group's intended-user centroid and
    its phases co-phased for the group's weakest intended user."""
    topo, cfg = model.topo, model.cfg
    G = gamma_rows(channels, state.theta)                # (U, J+1, L)
    plans = {}
    if not relocate:
        return G, plans
    current = {j: int(np.argmax(state.chi[j])) for j in range(cfg.J) if state.chi[j].max() > 0.5}
    rows_now = G[:, 0, :] + np.einsum("ju,ujl->ul", state.chi[:, topo.user_group], G[:, 1:, :])
    P = np.abs(rows_now @ state.w.T) ** 2
    for k in range(cfg.K):
        users = topo.group_users(k)
        intended = users[~topo.user_is_eve[users]]
        sig = P[intended, k]
        rate = np.log2(1 + sig / (P[intended].sum(axis=1) - sig + topo.noise[intended]))
        weakest = intended[np.argmin(rate)]
        q = region_clip(topo.intended_centroid(k))
        for j in range(cfg.J):
            if current.get(j) == k:
                continue
            G_j, g_j, _, _ = model.aris(j, q)
            c = cascade_vectors(channels.h[[weakest]], G_j, g_j[[weakest]], state.w)[0, k]
            theta = aligned_phases(c)
            plans[(j, k)] = (q, theta)
            G[users, j + 1, :] = (g_j[users].conj() * np.exp(1j * theta)) @ G_j
    return G, plans


def optimize_association(state, model: ChannelModel, channels: ChannelSet, tau: float,
                         relocate: bool = True) -> AssociationResult:
    cfg, topo = model.cfg, model.topo
    J, K = cfg.J, cfg.K
    if J == 0:
        return AssociationResult(state.chi.copy(), state.chi.copy(), False, 0)
    from .scenario import clip_to_region
    rows, plans = prospective_gamma(model, channels, state, relocate,
                                    lambda xy: clip_to_region(cfg, xy))
    gam = np.einsum("ujl,kl->ukj", rows, state.w) / np.sqrt(topo.noise)[:, None, None]
    ug, eve = topo.user_group, topo.user_is_eve
    ups = cfg.upsilon[ug]
    starts = [state.chi.copy()]
    if cfg.association_start == "uniform":
        starts.insert(0, np.full((J, K), 1.0 / K))
    status, traj, pens, chi, it_count = conic.OPTIMAL, [], [], state.chi.copy(), 0
    for start in starts:
        total, interf = true_slacks(gam, start, ug)
        obj, om, _ = penalised_objective(gam, start, ug, eve, K, tau)
        it = AssociationIterate(start, total, interf, om, tau, obj)
        traj, pens = [obj], [float(np.sum(start - start ** 2))]
        ok = True
        for n in range(1, cfg.max_assoc_iters + 1):
            nxt, sol = association_sca_step(it, gam, ug, eve, ups, tau)
            it_count += 1
            if not sol.ok:
                status = sol.status
                ok = n > 1
                break
            delta = np.max(np.abs(nxt.chi - it.chi))
            it = nxt
            traj.append(it.objective)
            pens.append(float(np.sum(it.chi - it.chi ** 2)))
            if delta <= cfg.eps_a:
                break
        if ok:
            chi = it.chi
            status = conic.OPTIMAL
            break
    binary = round_and_repair(chi)
    changed = not np.array_equal(binary, state.chi)
    return AssociationResult(binary, chi, changed, it_count, traj, pens, status, plans)
