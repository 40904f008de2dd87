"""Transmit beamforming block: auxiliary updates alternated with an SDR over
the lifted beamformers, followed by rank-one extraction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic
from .mm import add_rate_constraints, closed_form_aux, wiretap_scale
from .rates import rates_from_powers, received_powers


@dataclass
class TxAuxiliaries:
    xi: np.ndarray        # (U,) in 1/W
    is_eve: np.ndarray


@dataclass
class LinkContext:
    """Everything the small-scale solvers need about the users of a scenario."""

    rows: np.ndarray          # (U, L) effective rows
    user_group: np.ndarray
    is_eve: np.ndarray
    noise: np.ndarray
    upsilon: np.ndarray       # (K,)
    P_T: float
    K: int

    @property
    def user_upsilon(self) -> np.ndarray:
        return self.upsilon[self.user_group]

    def score(self, w) -> tuple[float, float]:
        """(objective, worst wiretap excess in bits) of beamformers w."""
        return score_powers(received_powers(self.rows, w), self.user_group, self.is_eve,
                            self.noise, self.upsilon, self.K)


def score_powers(P, user_group, is_eve, noise, upsilon, K) -> tuple[float, float]:
    _, r = rates_from_powers(P, user_group, noise)
    obj = 0.0
    excess = -np.inf
    for k in range(K):
        sel = user_group == k
        obj += r[sel & ~is_eve].min()
        eves = sel & is_eve
        if eves.any():
            excess = max(excess, r[eves].max() - upsilon[k])
    return float(obj), float(excess)


@dataclass
class TxResult:
    w: np.ndarray
    W: np.ndarray
    objective: float
    relaxed_trace: list = field(default_factory=list)
    iterations: int = 0
    status: str = conic.OPTIMAL
    accepted: bool = True


def build_xi(rows) -> np.ndarray:
    """(U, L, L) rank-one matrices with Tr(Xi_u W) = a_u W a_u^H."""
    rows = np.asarray(rows)
    return np.einsum("ui,uj->uij", rows.conj(), rows)


def trace_powers(Xi, W_set) -> np.ndarray:
    """(U, K) values Re Tr(Xi_u W_l)."""
    return np.real(np.einsum("uij,lji->ul", Xi, W_set))


def update_xi_aux(W_set, Xi, noise, user_group, is_eve) -> TxAuxiliaries:
    return TxAuxiliaries(closed_form_aux(trace_powers(Xi, W_set), user_group, is_eve, noise),
                         np.asarray(is_eve))


def solve_w_subproblem(aux: TxAuxiliaries, Xi, P_T: float, upsilon, noise, user_group, K: int):
    """One SDR of the transmit subproblem. Returns (W, Omega_bits, ConicSolution).

    The lifted variable is expressed in a whitened basis, W = P_T B Y B^H with
    B = S^{-1/2} and S the sum of the noise-normalised channel matrices, which keeps
    nearly parallel user channels well conditioned.
    """
    Xi = np.asarray(Xi)
    U, L, _ = Xi.shape
    noise = np.asarray(noise, dtype=float)
    scaled = Xi * (P_T / noise)[:, None, None]
    B = whitening_basis(scaled.sum(axis=0))
    Xw = np.einsum("ai,uab,bj->uij", B.conj(), scaled, B)
    Q = B.conj().T @ B
    prob = conic.ConicProblem()
    Ys = [prob.hermitian(L) for _ in range(K)]
    omega = prob.variable(K)
    prob.le(conic.affine_sum([Y.inner(Q) for Y in Ys]), 1.0)
    T = [[Ys[l].inner(Xw[u]) for l in range(K)] for u in range(U)]
    upsilon = np.asarray(upsilon, dtype=float)
    add_rate_constraints(prob, T, user_group, aux.is_eve, aux.xi * noise,
                         [omega[user_group[u]] for u in range(U)], upsilon[user_group])
    prob.maximize(conic.affine_sum(omega))
    sol = conic.solve(prob)
    W = np.array([P_T * B @ Y.value(sol.x) @ B.conj().T for Y in Ys])
    return W, sol.value(omega), sol


def whitening_basis(S, floor: float = 1e-6) -> np.ndarray:
    lam, V = np.linalg.eigh((S + S.conj().T) / 2)
    lam = np.maximum(lam, floor * max(lam[-1], 1e-300))
    return V / np.sqrt(lam)


def initialize_beamformers(ctx: LinkContext) -> np.ndarray:
    """Per-group MRT towards the strongest intended user, scaled down to meet the wiretap caps."""
    K, L = ctx.K, ctx.rows.shape[1]
    w = np.zeros((K, L), dtype=complex)
    gains = np.sum(np.abs(ctx.rows) ** 2, axis=1)
    for k in range(K):
        idx = np.flatnonzero((ctx.user_group == k) & ~ctx.is_eve)
        a = ctx.rows[idx[np.argmax(gains[idx])]]
        w[k] = np.sqrt(ctx.P_T / K) * a.conj() / np.linalg.norm(a)
    return repair_power(w, ctx)


def repair_power(w, ctx: LinkContext) -> np.ndarray:
    P = received_powers(ctx.rows, w)
    c = wiretap_scale(P, ctx.user_group, ctx.is_eve, ctx.noise, ctx.user_upsilon)
    return w * np.sqrt(c)


def extract_beamformers(W_set, ctx: LinkContext, n_rand: int, rng: np.random.Generator,
                        rank_tol: float = 1e-6):
    """Rank-one beamformers from lifted solutions.

    Returns (w, objective, feasible). Every candidate keeps each beam's power
    Tr(W_k); infeasible candidates are scaled down uniformly until the wiretap
    caps hold.
    """
    K, L = len(W_set), W_set.shape[1]
    eig = [np.linalg.eigh((Wk + Wk.conj().T) / 2) for Wk in W_set]
    lam = [np.clip(e[0], 0, None) for e in eig]
    powers = np.array([max(np.trace(Wk).real, 0.0) for Wk in W_set])
    principal = np.array([np.sqrt(l[-1]) * e[1][:, -1] for l, e in zip(lam, eig)])
    rank_one = all(l[-1] <= 0 or l[-2] / l[-1] <= rank_tol for l in lam) if L > 1 else True
    candidates = [_rescale(principal, powers)]
    if not rank_one:
        factors = [e[1] * np.sqrt(l) for l, e in zip(lam, eig)]
        z = (rng.standard_normal((n_rand, K, L)) + 1j * rng.standard_normal((n_rand, K, L))) / np.sqrt(2)
        draws = np.einsum("kij,nkj->nki", np.array(factors), z)
        candidates.extend(_rescale(d, powers) for d in draws)
    best, best_obj = None, -np.inf
    for cand in candidates:
        obj, excess = ctx.score(cand)
        if excess > 0:
            cand = repair_power(cand, ctx)
            obj, excess = ctx.score(cand)
        if excess <= 1e-9 and obj > best_obj:
            best, best_obj = cand, obj
    if best is None:
        return candidates[0], -np.inf, False
    return best, best_obj, True


def _rescale(w, powers) -> np.ndarray:
    norms = np.linalg.norm(w, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return w * (np.sqrt(powers) / safe)[:, None]


def tx_beamforming_loop(w0, ctx: LinkContext, eps: float = 1e-3, max_iters: int = 50,
                        n_rand: int = 200, rng: np.random.Generator | None = None) -> TxResult:
    """Alternate auxiliary updates and SDR solves until ||W - W_prev||_F / P_T <= eps.

    The extracted beamformers replace ``w0`` only if they are feasible and do not
    lower the exact objective.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    Xi = build_xi(ctx.rows)
    w0 = np.asarray(w0, dtype=complex)
    W = np.einsum("ki,kj->kij", w0, w0.conj())
    obj0, excess0 = ctx.score(w0)
    trace, status, it = [], conic.OPTIMAL, 0
    for it in range(1, max_iters + 1):
        aux = update_xi_aux(W, Xi, ctx.noise, ctx.user_group, ctx.is_eve)
        W_new, omega, sol = solve_w_subproblem(aux, Xi, ctx.P_T, ctx.upsilon, ctx.noise,
                                               ctx.user_group, ctx.K)
        if not sol.ok:
            status = sol.status
            break
        trace.append(float(np.sum(omega)))
        delta = np.linalg.norm(W_new - W) / ctx.P_T
        W = W_new
        if delta <= eps:
            break
    w, obj, ok = extract_beamformers(W, ctx, n_rand, rng)
    if ok and (obj >= obj0 or excess0 > 1e-9):
        return TxResult(w, W, obj, trace, it, status, True)
    W0 = np.einsum("ki,kj->kij", w0, w0.conj())
    return TxResult(w0, W0, obj0, trace, it, status, False)
